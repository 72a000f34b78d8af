"""Run configuration: a flat JSON object with dotted keys.

Every key is optional except ``master_seed``; unknown keys are errors. The
documented schema (key, default) is :data:`DEFAULTS`. ``corpus.baseline`` and
``corpus.emerging`` hold generator rosters as lists of
``{"id", "family", "params", "fingerprint_seed"}`` objects.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

from .baselines import ClMethodConfig
from .detector import PRESETS, TrainConfig
from .e3 import VARIANTS, EkfnTrainConfig, FusionConfig, quota
from .errors import ConfigError
from .synthgen import CorpusConfig, GeneratorSpec

PROTOCOLS = ("single", "sequential", "sweep", "arch")
RUN_METHODS = ("e3", "finetune", "er", "lwf", "majority", "baseline")

DEFAULT_BASELINE = [
    {"id": "b_checker", "family": "checkerboard", "params": {"amplitude": 0.05, "period": 1}, "fingerprint_seed": 0},
    {"id": "b_peak", "family": "spectral_peak", "params": {"amplitude": 0.1, "fx": 0.25, "fy": 0.0},
     "fingerprint_seed": 0},
    {"id": "b_blocks", "family": "block_quant", "params": {"amplitude": 1.0, "step": 0.3, "block": 8},
     "fingerprint_seed": 0},
]

DEFAULT_EMERGING = [
    {"id": "g_1", "family": "fixed_pattern", "params": {"amplitude": 0.1}, "fingerprint_seed": 11},
    {"id": "g_2", "family": "noise_shaping", "params": {"amplitude": 0.1}, "fingerprint_seed": 0},
    {"id": "g_3", "family": "checkerboard", "params": {"amplitude": 0.08, "period": 3}, "fingerprint_seed": 0},
    {"id": "g_4", "family": "fixed_pattern", "params": {"amplitude": 0.1}, "fingerprint_seed": 99},
    {"id": "g_5", "family": "spectral_peak", "params": {"amplitude": 0.06, "fx": 0.15, "fy": 0.15},
     "fingerprint_seed": 0},
    {"id": "g_6", "family": "spectral_peak", "params": {"amplitude": 0.1, "fx": 0.0, "fy": 0.25},
     "fingerprint_seed": 0},
]

DEFAULTS: Dict[str, Any] = {
    "master_seed": None,
    "protocol": "sequential",
    "methods": ["e3", "finetune", "er", "lwf"],
    "sequence": None,  # emerging ids in arrival order; None = whole roster (sequential uses the first 5)
    "sequence_length": 5,
    "corpus.image_size": 48,
    "corpus.patch_size": 32,
    "corpus.baseline": DEFAULT_BASELINE,
    "corpus.emerging": DEFAULT_EMERGING,
    "corpus.real_counts": {"train": 600, "val": 0, "test": 40},
    "corpus.baseline_counts": {"train": 600, "val": 0, "test": 45},
    "corpus.emerging_counts": {"train": 200, "val": 0, "test": 40},
    "buffer.capacity": 200,
    "budget.n": 100,
    "detector.preset": "small",
    "detector.embed_dim": 32,
    "detector.highpass": True,
    "baseline_train.learning_rate": 1e-3,
    "baseline_train.epochs": 20,
    "baseline_train.batch_size": 32,
    "baseline_train.class_weighting": "paper",
    "baseline_train.lr_decay": 1.0,
    "baseline_train.lr_decay_every": 0,
    "update_train.learning_rate": 1e-3,
    "update_train.epochs": 40,
    "update_train.batch_size": 32,
    "update_train.class_weighting": "paper",
    "ekfn.n_layers": 2,
    "ekfn.heads": 2,
    "ekfn.ff_mult": 2,
    "ekfn.mlp_hidden": 64,
    "ekfn.variant": "full",
    "ekfn_train.steps": 300,
    "ekfn_train.learning_rate": 1e-3,
    "ekfn_train.batch_size": 32,
    "lwf.lambda": 1.0,
    "lwf.temperature": 2.0,
    "sweep.budgets": [20, 50, 100, 200],
    "arch.presets": ["tiny", "small", "medium"],
    "single.baseline_fraction": 0.5,
}


@dataclass
class RunConfig:
    values: Dict[str, Any] = field(default_factory=dict)

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def master_seed(self) -> int:
        return int(self.values["master_seed"])

    def with_overrides(self, **overrides) -> "RunConfig":
        merged = copy.deepcopy(self.values)
        merged.update({k.replace("__", "."): v for k, v in overrides.items()})
        return validate_config(merged)

    # -- typed views ---------------------------------------------------------------
    def corpus_config(self) -> CorpusConfig:
        v = self.values
        return CorpusConfig(
            baseline=[GeneratorSpec.from_dict(d) for d in v["corpus.baseline"]],
            emerging=[GeneratorSpec.from_dict(d) for d in v["corpus.emerging"]],
            master_seed=self.master_seed, image_size=v["corpus.image_size"],
            real_counts=dict(v["corpus.real_counts"]), baseline_counts=dict(v["corpus.baseline_counts"]),
            emerging_counts=dict(v["corpus.emerging_counts"]),
        )

    def _train(self, prefix: str, **extra) -> TrainConfig:
        v = self.values
        return TrainConfig(learning_rate=v[f"{prefix}.learning_rate"], epochs=v[f"{prefix}.epochs"],
                           batch_size=v[f"{prefix}.batch_size"],
                           class_weighting=v[f"{prefix}.class_weighting"],
                           patch_size=v["corpus.patch_size"], **extra)

    def baseline_train(self, seed: int) -> TrainConfig:
        return self._train("baseline_train", seed=seed, lr_decay=self.values["baseline_train.lr_decay"],
                           lr_decay_every=self.values["baseline_train.lr_decay_every"])

    def update_train(self, seed: int) -> TrainConfig:
        return self._train("update_train", seed=seed)

    def fusion(self) -> FusionConfig:
        v = self.values
        return FusionConfig(n_layers=v["ekfn.n_layers"], heads=v["ekfn.heads"], ff_mult=v["ekfn.ff_mult"],
                            mlp_hidden=v["ekfn.mlp_hidden"], variant=v["ekfn.variant"])

    def ekfn_train(self, seed: int) -> EkfnTrainConfig:
        v = self.values
        return EkfnTrainConfig(steps=v["ekfn_train.steps"], learning_rate=v["ekfn_train.learning_rate"],
                               batch_size=v["ekfn_train.batch_size"], seed=seed)

    def cl_method(self, method: str, seed: int) -> ClMethodConfig:
        return ClMethodConfig(method=method, lambda_distill=self.values["lwf.lambda"],
                              temperature=self.values["lwf.temperature"], train=self.update_train(seed))

    def sequence(self, protocol: Optional[str] = None) -> List[str]:
        """Emerging ids in arrival order; ``single`` defaults to the whole roster."""
        ids = [g["id"] for g in self.values["corpus.emerging"]]
        seq = self.values["sequence"]
        if seq is None:
            protocol = protocol or self.values["protocol"]
            return ids if protocol == "single" else ids[: self.values["sequence_length"]]
        return list(seq)

    def to_json(self) -> str:
        return json.dumps(self.values, indent=1, sort_keys=True)

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.values, sort_keys=True).encode()).hexdigest()[:16]


def _require(cond: bool, key: str, message: str) -> None:
    if not cond:
        raise ConfigError(message, key=key)


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def validate_config(raw: Dict[str, Any]) -> RunConfig:
    """Materialise defaults and check every invariant; raises ConfigError naming the key."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown keys {unknown}", key=unknown[0])
    if raw.get("master_seed") is None:
        raise ConfigError("master_seed is required", key="master_seed")
    v = copy.deepcopy(DEFAULTS)
    v.update(copy.deepcopy(raw))

    _require(_is_int(v["master_seed"]) and v["master_seed"] >= 0, "master_seed", "must be a non-negative integer")
    _require(v["protocol"] in PROTOCOLS, "protocol", f"must be one of {PROTOCOLS}")
    _require(isinstance(v["methods"], list) and v["methods"] and all(m in RUN_METHODS for m in v["methods"]),
             "methods", f"must be a non-empty list drawn from {RUN_METHODS}")
    for key in ("corpus.image_size", "corpus.patch_size", "buffer.capacity", "budget.n", "detector.embed_dim",
                "sequence_length", "baseline_train.epochs", "baseline_train.batch_size", "update_train.epochs",
                "update_train.batch_size", "ekfn.n_layers", "ekfn.heads", "ekfn.ff_mult", "ekfn.mlp_hidden",
                "ekfn_train.steps", "ekfn_train.batch_size", "baseline_train.lr_decay_every"):
        _require(_is_int(v[key]) and v[key] >= 0, key, "must be a non-negative integer")
    m = v["buffer.capacity"]
    _require(m >= 4 and m % 2 == 0, "buffer.capacity", f"must be even and >= 4, got {m}")
    _require(v["corpus.patch_size"] <= v["corpus.image_size"], "corpus.patch_size", "must not exceed image size")
    _require(v["corpus.patch_size"] % 8 == 0, "corpus.patch_size", "must be a multiple of 8")
    _require(v["detector.preset"] in PRESETS, "detector.preset", f"must be one of {sorted(PRESETS)}")
    _require(v["detector.embed_dim"] >= 4, "detector.embed_dim", "must be >= 4")
    _require(v["detector.embed_dim"] % max(v["ekfn.heads"], 1) == 0, "ekfn.heads", "must divide detector.embed_dim")
    _require(v["ekfn.variant"] in VARIANTS, "ekfn.variant", f"must be one of {VARIANTS}")
    _require(isinstance(v["detector.highpass"], bool), "detector.highpass", "must be true or false")
    for prefix in ("baseline_train", "update_train"):
        _require(v[f"{prefix}.class_weighting"] in ("paper", "inverse", "none"), f"{prefix}.class_weighting",
                 "must be paper, inverse or none")
    for key in ("baseline_train.learning_rate", "update_train.learning_rate", "ekfn_train.learning_rate",
                "lwf.lambda", "baseline_train.lr_decay"):
        _require(isinstance(v[key], (int, float)) and v[key] >= 0, key, "must be a non-negative number")
    _require(isinstance(v["lwf.temperature"], (int, float)) and v["lwf.temperature"] > 0, "lwf.temperature",
             "must be positive")
    _require(0 <= v["single.baseline_fraction"] < 1, "single.baseline_fraction", "must be in [0, 1)")
    _require(isinstance(v["sweep.budgets"], list) and v["sweep.budgets"]
             and all(_is_int(b) and b > 0 for b in v["sweep.budgets"]), "sweep.budgets",
             "must be a list of positive integers")
    _require(isinstance(v["arch.presets"], list) and all(p in PRESETS for p in v["arch.presets"]),
             "arch.presets", f"entries must be in {sorted(PRESETS)}")

    cfg = RunConfig(v)
    corpus = cfg.corpus_config()
    try:
        corpus.validate()
    except ConfigError as exc:
        raise ConfigError(str(exc), key=exc.key or "corpus") from None

    ids = [g.id for g in corpus.emerging]
    seq = cfg.sequence()
    _require(all(s in ids for s in seq), "sequence", f"ids must come from the emerging roster {ids}")
    _require(len(set(seq)) == len(seq), "sequence", "ids must be unique")
    _require(v["sequence_length"] >= 1 and (v["sequence"] is not None or v["sequence_length"] <= len(ids)),
             "sequence_length", f"must be between 1 and {len(ids)}")
    n = v["budget.n"]
    planned = [1] if v["protocol"] == "single" else range(1, len(seq) + 1)
    for k in planned:
        _require(n >= quota(m, k), "budget.n", f"N={n} is below the buffer quota {quota(m, k)} at k={k}")
    _require(n <= v["corpus.emerging_counts"].get("train", 0), "budget.n",
             "exceeds the emerging train pool size")
    _require(max(v["sweep.budgets"]) <= v["corpus.emerging_counts"].get("train", 0), "sweep.budgets",
             "exceed the emerging train pool size")
    _require(m // 2 <= v["corpus.real_counts"].get("train", 0), "buffer.capacity",
             "needs M/2 real training images")
    _require(m // 2 <= v["corpus.baseline_counts"].get("train", 0), "buffer.capacity",
             "needs M/2 baseline training images")
    return cfg


def load_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc}") from None
    return validate_config(raw)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(cfg.to_json())
