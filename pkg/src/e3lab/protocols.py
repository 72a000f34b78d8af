"""Episode execution and the experiment protocols.

* ``single``: each emerging generator is absorbed independently, starting
  from the baseline detector; the test mixes baseline and new synthetics.
* ``sequential``: generators arrive one after another; after every episode each
  method is scored on every source seen so far.
* ``sweep``: the sequential protocol for E3 at several budgets ``N``.
* ``arch``: the sequential protocol repeated for several detector presets.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import baselines as cl
from .config import RunConfig
from .detector import DetectorModel, build_detector, predict_scores, train_detector
from .e3 import (E3Model, ExpertEnsemble, FusionNetwork, MemoryBuffer, build_ekfn, e3_predict,
                 init_memory_buffer, train_ekfn, train_expert_detector, update_memory_buffer)
from .errors import ConfigError
from .metrics import accuracy, roc_auc
from .rng import derive_seed
from .synthgen import BASELINE, REAL, Corpus, LabeledImage, build_corpus, split_corpus

log = logging.getLogger(__name__)


@dataclass
class EpisodeReport:
    method: str
    episode: int
    generator: Optional[str]
    per_source_auc: Dict[str, float]
    per_source_accuracy: Dict[str, float]
    wall_time: float = 0.0
    extra: Dict[str, float] = field(default_factory=dict)

    @property
    def average_auc(self) -> float:
        return float(np.mean(list(self.per_source_auc.values())))

    @property
    def average_accuracy(self) -> float:
        return float(np.mean(list(self.per_source_accuracy.values())))


@dataclass
class ProtocolResult:
    protocol: str
    method: str
    episodes: List[EpisodeReport]
    config_fingerprint: str
    master_seed: int
    setting: str = ""
    state: Optional["MethodState"] = field(default=None, repr=False, compare=False)

    @property
    def label(self) -> str:
        return f"{self.method}@{self.setting}" if self.setting else self.method

    @property
    def final(self) -> EpisodeReport:
        return self.episodes[-1]


# -- method state --------------------------------------------------------------------------

@dataclass
class MethodState:
    method: str
    f0: DetectorModel
    buffer: MemoryBuffer
    k: int = 0
    seen: List[str] = field(default_factory=lambda: [BASELINE])
    model: Optional[DetectorModel] = None
    ensemble: Optional[ExpertEnsemble] = None
    ekfn: Optional[FusionNetwork] = None
    experts: List[DetectorModel] = field(default_factory=list)

    def scores(self, images: Sequence[LabeledImage]) -> np.ndarray:
        if self.method == "e3":
            if self.ekfn is None:  # no generator absorbed yet: E3 is the baseline detector
                return predict_scores(self.f0, images)
            return e3_predict(self.ensemble, self.ekfn, images)
        if self.method == "majority":
            return cl.majority_vote_predict(self.experts, images)
        return predict_scores(self.model, images)

    def checkpointable(self):
        """What a checkpoint of this state holds: E3Model, expert list or single detector."""
        if self.method == "e3":
            return E3Model(self.ensemble, self.ekfn) if self.ekfn is not None else self.f0
        if self.method == "majority":
            return list(self.experts)
        return self.model


def initial_state(method: str, f0: DetectorModel, buffer: MemoryBuffer) -> MethodState:
    state = MethodState(method, f0, buffer)
    if method == "e3":
        state.ensemble = ExpertEnsemble.from_baseline(f0)
    elif method == "majority":
        state.experts = [f0]
    else:
        state.model = f0
    return state


@dataclass
class RunContext:
    """Shared inputs of one protocol run; identical for every method compared."""

    config: RunConfig
    corpus: Corpus
    f0: DetectorModel
    budget: int
    strict_buffer: bool = True
    expert_cache: Dict[tuple, DetectorModel] = field(default_factory=dict)

    def new_images(self, gid: str) -> List[LabeledImage]:
        return split_corpus(self.corpus, gid, "train")[: self.budget]

    def initial_buffer(self) -> MemoryBuffer:
        return init_memory_buffer(self.config["buffer.capacity"], split_corpus(self.corpus, REAL, "train"),
                                  split_corpus(self.corpus, BASELINE, "train"),
                                  seed=derive_seed(self.config.master_seed, "buffer"))

    def expert(self, gid: str, k: int, reals: Sequence[LabeledImage]) -> DetectorModel:
        # E3 and majority voting train the very same expert; compute it once
        key = (gid, k, self.budget)
        if key not in self.expert_cache:
            seed = derive_seed(self.config.master_seed, f"expert:{gid}", k)
            self.expert_cache[key] = train_expert_detector(self.f0, self.new_images(gid), reals,
                                                           self.config.update_train(seed))
        return self.expert_cache[key]


def run_episode(state: MethodState, gid: str, ctx: RunContext, evaluate: bool = True):
    """Absorb generator ``gid`` with ``state.method``; returns (new state, report)."""
    cfg = ctx.config
    seed = cfg.master_seed
    k = state.k + 1
    new = ctx.new_images(gid)
    train_seed = derive_seed(seed, f"update:{gid}", k)
    start = time.perf_counter()
    method = state.method
    buf_next = update_memory_buffer(state.buffer, new, derive_seed(seed, "buffer"), slot_id=gid,
                                    strict=ctx.strict_buffer)
    nxt = MethodState(method, state.f0, buf_next, k, state.seen + [gid], state.model, state.ensemble,
                      state.ekfn, list(state.experts))
    if method == "e3":
        expert = ctx.expert(gid, k, state.buffer.real)
        nxt.ensemble = state.ensemble.add(expert.embedder)
        ekfn_seed = derive_seed(seed, "ekfn", k)
        fresh = build_ekfn(len(nxt.ensemble), state.f0.embed_dim, cfg.fusion(), seed=ekfn_seed)
        nxt.ekfn = train_ekfn(fresh, nxt.ensemble, buf_next, cfg.ekfn_train(ekfn_seed))
    elif method == "majority":
        nxt.experts.append(ctx.expert(gid, k, state.buffer.real))
    elif method == "finetune":
        nxt.model = cl.finetune_step(state.model, new, state.buffer.real, cfg.update_train(train_seed))
    elif method == "er":
        nxt.model = cl.er_step(state.model, state.buffer, new, cfg.update_train(train_seed))
    elif method == "lwf":
        prev = state.model
        nxt.model = cl.lwf_step(state.model, prev, new, state.buffer.real, cfg.update_train(train_seed),
                                cfg["lwf.lambda"], cfg["lwf.temperature"])
    elif method == "baseline":
        pass
    else:
        raise ConfigError(f"unknown method {method!r}", key="methods")
    elapsed = time.perf_counter() - start
    report = evaluate_state(nxt, ctx.corpus, k, gid) if evaluate else None
    if report is not None:
        report.wall_time = elapsed
    return nxt, report


def evaluate_state(state: MethodState, corpus: Corpus, episode: int, gid: Optional[str]) -> EpisodeReport:
    """Per-source AUC and accuracy: each seen source's synthetic test pool against the real test pool."""
    reals = split_corpus(corpus, REAL, "test")
    real_scores = state.scores(reals)
    aucs, accs = {}, {}
    for src in state.seen:
        synth = split_corpus(corpus, src, "test")
        s = state.scores(synth)
        aucs[src] = roc_auc(s, real_scores)
        accs[src] = accuracy(np.concatenate([s, real_scores]),
                             np.concatenate([np.ones(len(s), int), np.zeros(len(real_scores), int)]))
    return EpisodeReport(state.method, episode, gid, aucs, accs)


def mixed_test_pool(corpus: Corpus, gid: str, baseline_fraction: float = 0.5) -> List[LabeledImage]:
    """Synthetic test images with ``baseline_fraction`` drawn from the baseline pool."""
    base = split_corpus(corpus, BASELINE, "test")
    new = split_corpus(corpus, gid, "test")
    if baseline_fraction <= 0:
        return new
    n_new = len(new)
    n_base = min(len(base), int(round(n_new * baseline_fraction / (1 - baseline_fraction))))
    return base[:n_base] + new


# -- protocols ---------------------------------------------------------------------------------

def prepare(config: RunConfig, corpus: Optional[Corpus] = None, f0: Optional[DetectorModel] = None,
            preset: Optional[str] = None) -> tuple:
    corpus = corpus or build_corpus(config.corpus_config())
    if f0 is None:
        f0 = train_baseline(config, corpus, preset=preset)
    return corpus, f0


def train_baseline(config: RunConfig, corpus: Corpus, preset: Optional[str] = None) -> DetectorModel:
    seed = config.master_seed
    model = build_detector(preset or config["detector.preset"], config["detector.embed_dim"],
                           seed=derive_seed(seed, "detector-init"), highpass=config["detector.highpass"],
                           patch_size=config["corpus.patch_size"])
    data = split_corpus(corpus, REAL, "train") + split_corpus(corpus, BASELINE, "train")
    return train_detector(model, data, config.baseline_train(derive_seed(seed, "baseline-train")))


def run_sequential(config: RunConfig, corpus: Corpus, f0: DetectorModel, methods: Sequence[str],
                   budget: Optional[int] = None, strict_buffer: bool = True, protocol: str = "sequential",
                   setting: str = "", expert_cache: Optional[dict] = None) -> List[ProtocolResult]:
    """``expert_cache`` may be shared between runs whose configs differ only in the
    fusion network; experts are then trained once."""
    ctx = RunContext(config, corpus, f0, budget or config["budget.n"], strict_buffer)
    if expert_cache is not None:
        ctx.expert_cache = expert_cache
    results = []
    for method in methods:
        state = initial_state(method, f0, ctx.initial_buffer())
        reports = []
        for gid in config.sequence():
            state, report = run_episode(state, gid, ctx)
            log.info("%s %s episode %d avg AUC %.4f", protocol, method, report.episode, report.average_auc)
            reports.append(report)
        results.append(ProtocolResult(protocol, method, reports, config.fingerprint(), config.master_seed,
                                      setting, state))
    return results


def run_single(config: RunConfig, corpus: Corpus, f0: DetectorModel,
               methods: Sequence[str]) -> List[ProtocolResult]:
    ctx = RunContext(config, corpus, f0, config["budget.n"])
    frac = config["single.baseline_fraction"]
    reals = split_corpus(corpus, REAL, "test")
    results = []
    for method in methods:
        reports = []
        for i, gid in enumerate(config.sequence("single"), 1):
            state = initial_state(method, f0, ctx.initial_buffer())
            state, report = run_episode(state, gid, ctx)
            report.episode = i
            mixed = mixed_test_pool(corpus, gid, frac)
            ms, rs = state.scores(mixed), state.scores(reals)
            report.extra = {
                "mixed_auc": roc_auc(ms, rs),
                "mixed_accuracy": accuracy(np.concatenate([ms, rs]),
                                           np.concatenate([np.ones(len(ms), int), np.zeros(len(rs), int)])),
            }
            reports.append(report)
        results.append(ProtocolResult("single", method, reports, config.fingerprint(), config.master_seed))
    return results


def run_sweep(config: RunConfig, corpus: Corpus, f0: DetectorModel, budgets: Sequence[int],
              methods: Sequence[str] = ("e3",)) -> List[ProtocolResult]:
    results = []
    for n in budgets:
        # small budgets may fall below the early buffer quotas: the slot takes all N images
        results += run_sequential(config, corpus, f0, methods, budget=n, strict_buffer=False,
                                  protocol="sweep", setting=f"N={n}")
    return results


def run_protocol(config: RunConfig, corpus: Optional[Corpus] = None, f0: Optional[DetectorModel] = None,
                 protocol: Optional[str] = None, methods: Optional[Sequence[str]] = None) -> List[ProtocolResult]:
    """Run one protocol for every configured method; one ProtocolResult per method and setting."""
    protocol = protocol or config["protocol"]
    methods = list(methods or config["methods"])
    if protocol not in ("single", "sequential", "sweep", "arch"):
        raise ConfigError(f"unknown protocol {protocol!r}", key="protocol")
    corpus = corpus or build_corpus(config.corpus_config())
    if protocol == "arch":
        results = []
        for preset in config["arch.presets"]:
            base = train_baseline(config, corpus, preset=preset)
            results += run_sequential(config, corpus, base, methods, protocol="arch", setting=f"preset={preset}")
        return results
    corpus, f0 = prepare(config, corpus, f0)
    if protocol == "single":
        return run_single(config, corpus, f0, methods)
    if protocol == "sweep":
        return run_sweep(config, corpus, f0, config["sweep.budgets"], methods)
    return run_sequential(config, corpus, f0, methods)
