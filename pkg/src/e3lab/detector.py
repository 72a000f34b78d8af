"""Baseline detector f = h(phi(x)): a compact CNN embedder and an affine head."""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError
from .rng import stream
from .synthgen import LabeledImage, center_patches, random_patches
from .tensor.nn import Conv2d, Linear, Module

PRESETS = {
    "tiny": (8, 16),
    "small": (16, 32),
    "medium": (32, 64),
}

LAPLACIAN = np.array([[0, -1, 0], [-1, 4, -1], [0, -1, 0]], dtype=np.float32)


class Embedder(Module):
    """Fixed Laplacian residual filter, three conv/ReLU/max-pool blocks, global average pool."""

    def __init__(self, preset: str, embed_dim: int, rng: np.random.Generator, highpass: bool = True):
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}", key="detector.preset")
        c1, c2 = PRESETS[preset]
        self.highpass = highpass
        self._hp = T.Tensor(LAPLACIAN.reshape(1, 1, 3, 3))  # constant, not a parameter
        self.convs = [Conv2d(1, c1, 3, rng, padding=1),
                      Conv2d(c1, c2, 3, rng, padding=1),
                      Conv2d(c2, embed_dim, 3, rng, padding=1)]

    def forward(self, x: T.Tensor) -> T.Tensor:
        if x.ndim == 3:
            x = x.reshape(x.shape[0], 1, x.shape[1], x.shape[2])
        if self.highpass:
            x = T.conv2d(x, self._hp, padding=1)
        for conv in self.convs:
            # pool before ReLU: identical result, 4x less work
            x = T.relu(T.max_pool2d(conv(x), 2))
        return T.global_avg_pool(x)


@dataclass
class TrainConfig:
    learning_rate: float = 5e-5
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    class_weighting: str = "paper"
    lr_decay: float = 1.0
    lr_decay_every: int = 0
    patch_size: int = 32

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0", key="train.epochs")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1", key="train.batch_size")
        if self.class_weighting not in ("paper", "inverse", "none"):
            raise ConfigError(f"unknown class weighting {self.class_weighting!r}", key="train.class_weighting")
        if self.learning_rate < 0:
            raise ConfigError("learning rate must be >= 0", key="train.learning_rate")


class DetectorModel:
    """Embedder ``phi`` plus classifier head ``h``; ``f(I) = sigmoid(h(phi(I)))``."""

    def __init__(self, embedder: Embedder, head: Optional[Linear], preset: str, embed_dim: int,
                 patch_size: int = 32):
        self.embedder = embedder
        self.head = head
        self.preset = preset
        self.embed_dim = embed_dim
        self.patch_size = patch_size
        self.loss_history: List[float] = []

    def logits(self, x: T.Tensor) -> T.Tensor:
        return self.head(self.embedder(x)).reshape(-1)

    def parameters(self) -> list:
        params = self.embedder.parameters()
        return params + (self.head.parameters() if self.head is not None else [])

    def named_parameters(self):
        yield from self.embedder.named_parameters("embedder.")
        if self.head is not None:
            yield from self.head.named_parameters("head.")

    def state_dict(self) -> dict:
        return {n: p.data.copy() for n, p in self.named_parameters()}

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def copy(self) -> "DetectorModel":
        return copy.deepcopy(self)


def build_detector(preset: str = "small", embed_dim: int = 32, seed: int = 0, highpass: bool = True,
                   patch_size: int = 32) -> DetectorModel:
    if embed_dim < 4:
        raise ConfigError("embed_dim must be >= 4", key="detector.embed_dim")
    rng = stream(seed, "detector-init")
    embedder = Embedder(preset, embed_dim, rng, highpass=highpass)
    head = Linear(embed_dim, 1, rng, init="xavier")
    return DetectorModel(embedder, head, preset, embed_dim, patch_size)


def class_weights(labels: np.ndarray, scheme: str) -> tuple:
    """Per-class weights (synthetic, real) from the counts of the full training set.

    ``paper`` weights the synthetic term by n_syn / n and the real term by
    n_real / n; ``inverse`` swaps them; ``none`` uses 1 for both.
    """
    n = len(labels)
    n_syn = int(np.sum(labels == 1))
    if scheme == "none":
        return 1.0, 1.0
    if scheme == "paper":
        return n_syn / n, (n - n_syn) / n
    if scheme == "inverse":
        return (n - n_syn) / n, n_syn / n
    raise ConfigError(f"unknown class weighting {scheme!r}", key="train.class_weighting")


ExtraLoss = Callable[[T.Tensor, np.ndarray], Optional[T.Tensor]]


def fit(model: DetectorModel, data: Sequence[LabeledImage], cfg: TrainConfig,
        extra_loss: Optional[ExtraLoss] = None, stream_label: str = "train") -> DetectorModel:
    """Train a copy of ``model`` with (weighted) BCE; ``extra_loss(logits, patches)``
    may add a term per batch. The input model is never mutated."""
    cfg.validate()
    trained = model.copy()
    trained.loss_history = []
    if cfg.epochs == 0:
        return trained
    labels = np.array([im.label for im in data])
    if len(data) == 0 or labels.min() == labels.max():
        raise DataError("training data must contain both real and synthetic images")
    w_syn, w_real = class_weights(labels, cfg.class_weighting)
    sample_w = np.where(labels == 1, w_syn, w_real).astype(np.float32)

    params = trained.parameters()
    opt = T.Adam(params, lr=cfg.learning_rate)
    for epoch in range(cfg.epochs):
        if cfg.lr_decay_every and epoch and epoch % cfg.lr_decay_every == 0:
            opt.state.lr *= cfg.lr_decay
        order = stream(cfg.seed, f"{stream_label}:shuffle", epoch).permutation(len(data))
        patch_rng = stream(cfg.seed, f"{stream_label}:patch", epoch)
        patches = random_patches([data[i] for i in order], cfg.patch_size, patch_rng)
        total, count = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = patches[start:start + cfg.batch_size]
            logits = trained.logits(T.Tensor(xb))
            loss = T.bce_with_logits(logits, labels[idx], sample_w[idx])
            if extra_loss is not None:
                extra = extra_loss(logits, xb)
                if extra is not None:
                    loss = loss + extra
            opt.zero_grad()
            T.backward(loss)
            opt.step()
            total += float(loss.data) * len(idx)
            count += len(idx)
        trained.loss_history.append(total / count)
    return trained


def train_detector(model: DetectorModel, data: Sequence[LabeledImage], cfg: TrainConfig) -> DetectorModel:
    return fit(model, data, cfg, stream_label="detector")


def _batched(images: Sequence[LabeledImage], patch_size: int, fn, batch: int = 256) -> np.ndarray:
    outs = []
    with T.no_grad():
        for start in range(0, len(images), batch):
            x = center_patches(images[start:start + batch], patch_size)
            outs.append(fn(T.Tensor(x)).data)
    return np.concatenate(outs) if outs else np.zeros(0, np.float32)


def predict_logits(model: DetectorModel, images: Sequence[LabeledImage]) -> np.ndarray:
    return _batched(images, model.patch_size, model.logits)


def predict_scores(model: DetectorModel, images: Sequence[LabeledImage]) -> np.ndarray:
    return sigmoid_np(predict_logits(model, images))


def embed(model: DetectorModel, images: Sequence[LabeledImage]) -> np.ndarray:
    """Embedder outputs (n, embed_dim) on center patches."""
    return embed_with(model.embedder, images, model.patch_size)


def embed_with(embedder: Embedder, images: Sequence[LabeledImage], patch_size: int) -> np.ndarray:
    out = _batched(images, patch_size, embedder)
    return out.reshape(len(images), -1)


def sigmoid_np(z: np.ndarray) -> np.ndarray:
    return T.ops._sigmoid_np(np.asarray(z, dtype=np.float32))
