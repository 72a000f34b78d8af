"""Ensemble of expert embedders: expert creation, memory buffer, fusion network.

An update for a new generator ``g_k``:

1. fine-tune a copy of the baseline detector on ``D_k`` plus the buffered reals,
   keep only its embedder (:func:`train_expert`);
2. shrink every buffered generator slot to ``floor(M / (2(k+1)))`` images and add
   a slot drawn from ``D_k`` (:func:`update_memory_buffer`);
3. train a freshly initialised fusion network on the frozen experts' embeddings
   of the buffer (:func:`train_ekfn`).
"""
from __future__ import annotations

import copy
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import tensor as T
from .detector import DetectorModel, Embedder, TrainConfig, embed_with, fit, sigmoid_np
from .errors import ConfigError, ContractError, DataError
from .rng import stream
from .synthgen import BASELINE, LabeledImage
from .tensor.nn import Linear, Module, TransformerEncoder, parameter

VARIANTS = ("full", "mlp_only", "no_weighting")


# -- memory buffer ---------------------------------------------------------------------

def quota(capacity: int, k: int) -> int:
    """Images kept per generator slot once ``k`` emerging generators are known."""
    return capacity // (2 * (k + 1))


@dataclass
class MemoryBuffer:
    capacity: int
    real: List[LabeledImage]
    slots: "OrderedDict[str, List[LabeledImage]]"
    k: int = 0

    @property
    def quota(self) -> int:
        return quota(self.capacity, self.k)

    @property
    def synthetic(self) -> List[LabeledImage]:
        return [im for slot in self.slots.values() for im in slot]

    def images(self) -> List[LabeledImage]:
        """Synthetic slots in insertion order, then the reals."""
        return self.synthetic + list(self.real)

    def __len__(self) -> int:
        return len(self.real) + sum(len(s) for s in self.slots.values())


def init_memory_buffer(capacity: int, reals: Sequence[LabeledImage], baseline: Sequence[LabeledImage],
                       seed: int) -> MemoryBuffer:
    """``M/2`` reals and one baseline slot of ``M/2`` images split evenly across the
    baseline generators, all drawn uniformly at random."""
    if capacity < 4 or capacity % 2:
        raise ConfigError(f"buffer capacity must be even and >= 4, got {capacity}", key="buffer.capacity")
    half = capacity // 2
    if len(reals) < half:
        raise DataError(f"need {half} real images for the buffer, have {len(reals)}")
    rng = stream(seed, "buffer-init")
    real = [reals[i] for i in sorted(rng.choice(len(reals), half, replace=False))]

    by_gen: Dict[str, List[LabeledImage]] = OrderedDict()
    for im in baseline:
        by_gen.setdefault(im.generator_id or im.source_id, []).append(im)
    gens = list(by_gen)
    share = [half // len(gens) + (1 if i < half % len(gens) else 0) for i in range(len(gens))]
    picked: List[LabeledImage] = []
    for g, n in zip(gens, share):
        pool = by_gen[g]
        if len(pool) < n:
            raise DataError(f"baseline generator {g} has {len(pool)} images, slot needs {n}")
        picked.extend(pool[i] for i in sorted(rng.choice(len(pool), n, replace=False)))
    return MemoryBuffer(capacity, real, OrderedDict([(BASELINE, picked)]), 0)


def update_memory_buffer(buf: MemoryBuffer, new_images: Sequence[LabeledImage], seed: int,
                         slot_id: Optional[str] = None, strict: bool = True) -> MemoryBuffer:
    """Absorb generator ``k+1``: every existing slot keeps ``P`` images drawn uniformly
    without replacement, and a new slot gets ``P`` images from ``new_images``.

    With ``strict=False`` a generator with fewer than ``P`` images contributes all
    of them instead of raising.
    """
    if not new_images:
        raise DataError("new generator data is empty")
    k = buf.k + 1
    p = quota(buf.capacity, k)
    if len(new_images) < p and strict:
        raise DataError(f"new generator supplies {len(new_images)} images, quota is {p}")
    slot_id = slot_id or new_images[0].source_id
    if slot_id in buf.slots:
        raise DataError(f"generator {slot_id!r} already has a buffer slot")
    rng = stream(seed, "buffer-update", k)
    slots: "OrderedDict[str, List[LabeledImage]]" = OrderedDict()
    for sid, imgs in buf.slots.items():
        keep = sorted(rng.choice(len(imgs), min(p, len(imgs)), replace=False))
        slots[sid] = [imgs[i] for i in keep]
    take = min(p, len(new_images))
    slots[slot_id] = [new_images[i] for i in sorted(rng.choice(len(new_images), take, replace=False))]
    return MemoryBuffer(buf.capacity, list(buf.real), slots, k)


# -- experts -------------------------------------------------------------------------------

def train_expert_detector(f0: DetectorModel, new_images: Sequence[LabeledImage],
                          reals: Sequence[LabeledImage], cfg: TrainConfig) -> DetectorModel:
    """Fine-tune a copy of ``f0`` on ``new_images`` plus ``reals``; head kept."""
    if not new_images:
        raise DataError("expert training needs synthetic images from the new generator")
    if not reals:
        raise DataError("expert training needs real images")
    return fit(f0, list(new_images) + list(reals), cfg, stream_label="expert")


def train_expert(f0: DetectorModel, new_images: Sequence[LabeledImage],
                 reals: Sequence[LabeledImage], cfg: TrainConfig) -> Embedder:
    """Expert embedder for a new generator; the fine-tuned classifier head is discarded."""
    return freeze(train_expert_detector(f0, new_images, reals, cfg).embedder)


def freeze(module: Module) -> Module:
    frozen = copy.deepcopy(module)
    for p in frozen.parameters():
        p.requires_grad = False
        p.grad = None
    return frozen


class ExpertEnsemble:
    """Ordered, frozen embedders; index 0 is the baseline embedder."""

    def __init__(self, embedders: Sequence[Embedder], embed_dim: int, patch_size: int = 32):
        self.embedders = [freeze(e) for e in embedders]
        self.embed_dim = embed_dim
        self.patch_size = patch_size

    @classmethod
    def from_baseline(cls, f0: DetectorModel) -> "ExpertEnsemble":
        return cls([f0.embedder], f0.embed_dim, f0.patch_size)

    def add(self, embedder: Embedder) -> "ExpertEnsemble":
        return ExpertEnsemble(self.embedders + [embedder], self.embed_dim, self.patch_size)

    def __len__(self) -> int:
        return len(self.embedders)

    def embed(self, images: Sequence[LabeledImage]) -> np.ndarray:
        """Token sequences (n, len(self), embed_dim), center patches."""
        outs = [embed_with(e, images, self.patch_size) for e in self.embedders]
        return np.stack(outs, axis=1)


# -- fusion network ------------------------------------------------------------------------------

@dataclass
class FusionConfig:
    n_layers: int = 2
    heads: int = 2
    ff_mult: int = 2
    mlp_hidden: int = 64
    variant: str = "full"

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}", key="ekfn.variant")
        if self.n_layers < 0 or self.heads < 1 or self.ff_mult < 1 or self.mlp_hidden < 1:
            raise ConfigError("layer/head/width counts must be positive", key="ekfn")


@dataclass
class EkfnTrainConfig:
    steps: int = 300
    learning_rate: float = 1e-3
    batch_size: int = 32
    seed: int = 0

    def validate(self) -> None:
        if self.steps < 0:
            raise ConfigError("steps must be >= 0", key="ekfn_train.steps")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1", key="ekfn_train.batch_size")


class FusionNetwork(Module):
    """Transformer over expert tokens, element-wise re-weighting, two-layer MLP.

    Input tokens are the experts' embeddings ``x_l`` plus a learned identity
    vector per expert; the transformer output ``z_l`` re-weights ``x_l`` and the
    concatenated result feeds the MLP. ``mlp_only`` skips the transformer and
    ``no_weighting`` feeds ``z_l`` straight to the MLP.
    """

    def __init__(self, num_experts: int, d: int, arch: FusionConfig, seed: int):
        if num_experts < 1:
            raise ConfigError("the fusion network needs at least one expert", key="ekfn.num_experts")
        arch.validate()
        self.num_experts = num_experts
        self.d = d
        self.arch = arch
        # separate streams: the MLP is identical across variants for a given seed
        mlp_rng = stream(seed, "ekfn-mlp")
        self.mlp1 = Linear(num_experts * d, arch.mlp_hidden, mlp_rng)
        self.mlp2 = Linear(arch.mlp_hidden, 1, mlp_rng, init="xavier")
        if arch.variant != "mlp_only":
            tr_rng = stream(seed, "ekfn-transformer")
            self.identity = parameter(tr_rng.standard_normal((num_experts, d)) * 0.02)
            self.encoder = TransformerEncoder(d, arch.n_layers, arch.heads, arch.ff_mult * d, tr_rng)

    def weights(self, x: T.Tensor) -> T.Tensor:
        """Transformer outputs ``z`` for tokens ``x`` of shape (b, L, d)."""
        return self.encoder(x + self.identity)

    def forward(self, x: T.Tensor) -> T.Tensor:
        if x.ndim != 3 or x.shape[1] != self.num_experts or x.shape[2] != self.d:
            raise ContractError(f"expected tokens (b, {self.num_experts}, {self.d}), got {x.shape}")
        variant = self.arch.variant
        if variant == "mlp_only":
            fused = x
        elif variant == "full":
            fused = T.hadamard(x, self.weights(x))
        else:
            fused = self.weights(x)
        flat = fused.reshape(x.shape[0], self.num_experts * self.d)
        return self.mlp2(T.relu(self.mlp1(flat))).reshape(-1)


def build_ekfn(num_experts: int, d: int, arch: Optional[FusionConfig] = None, seed: int = 0) -> FusionNetwork:
    return FusionNetwork(num_experts, d, arch or FusionConfig(), seed)


def train_ekfn(ekfn: FusionNetwork, ensemble: ExpertEnsemble, buf: MemoryBuffer,
               cfg: EkfnTrainConfig, tokens: Optional[np.ndarray] = None) -> FusionNetwork:
    """Minimise BCE over the buffer for ``cfg.steps`` ADAM steps; returns a trained copy.

    Embeddings are computed once with the frozen experts (or passed in as
    ``tokens``); experts receive no updates.
    """
    cfg.validate()
    if len(ensemble) != ekfn.num_experts:
        raise ContractError(f"ensemble has {len(ensemble)} experts, fusion network expects {ekfn.num_experts}")
    trained = copy.deepcopy(ekfn)
    if cfg.steps == 0:
        return trained
    images = buf.images()
    labels = np.array([im.label for im in images], dtype=np.float32)
    x_all = ensemble.embed(images) if tokens is None else tokens
    opt = T.Adam(trained.parameters(), lr=cfg.learning_rate)
    n = len(images)
    order = np.zeros(0, dtype=np.int64)
    epoch = 0
    for _ in range(cfg.steps):
        if order.size < cfg.batch_size:
            order = np.concatenate([order, stream(cfg.seed, "ekfn-shuffle", epoch).permutation(n)])
            epoch += 1
        idx, order = order[:cfg.batch_size], order[cfg.batch_size:]
        loss = T.bce_with_logits(trained(T.Tensor(x_all[idx])), labels[idx])
        opt.zero_grad()
        T.backward(loss)
        opt.step()
    return trained


def ekfn_scores(ekfn: FusionNetwork, tokens: np.ndarray, batch: int = 512) -> np.ndarray:
    outs = []
    with T.no_grad():
        for start in range(0, len(tokens), batch):
            outs.append(ekfn(T.Tensor(tokens[start:start + batch])).data)
    return sigmoid_np(np.concatenate(outs)) if outs else np.zeros(0, np.float32)


def e3_predict(ensemble: ExpertEnsemble, ekfn: FusionNetwork, images: Sequence[LabeledImage]) -> np.ndarray:
    return ekfn_scores(ekfn, ensemble.embed(images))


@dataclass
class E3Model:
    """A trained ensemble together with its fusion network."""

    ensemble: ExpertEnsemble
    ekfn: FusionNetwork

    def predict(self, images: Sequence[LabeledImage]) -> np.ndarray:
        return e3_predict(self.ensemble, self.ekfn, images)
