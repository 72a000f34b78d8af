"""Competing continual-learning updates: naive fine-tuning, experience replay,
learning without forgetting, and logit-sum majority voting."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .detector import DetectorModel, TrainConfig, fit, predict_logits, sigmoid_np
from .e3 import MemoryBuffer
from .errors import ConfigError, ContractError, DataError
from .synthgen import LabeledImage

METHODS = ("finetune", "er", "lwf", "majority_vote")


@dataclass
class ClMethodConfig:
    method: str = "finetune"
    lambda_distill: float = 1.0
    temperature: float = 2.0
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}", key="method")
        if self.lambda_distill < 0:
            raise ConfigError("lambda_distill must be >= 0", key="lwf.lambda")
        if self.temperature <= 0:
            raise ConfigError("temperature must be > 0", key="lwf.temperature")
        self.train.validate()


def finetune_step(model: DetectorModel, new_images: Sequence[LabeledImage],
                  reals: Sequence[LabeledImage], cfg: TrainConfig) -> DetectorModel:
    if not new_images or not reals:
        raise DataError("fine-tuning needs new synthetic images and real images")
    return fit(model, list(new_images) + list(reals), cfg)


def er_step(model: DetectorModel, buf: MemoryBuffer, new_images: Sequence[LabeledImage],
            cfg: TrainConfig) -> DetectorModel:
    """Fine-tune on the new images, the buffered reals and the buffered synthetics."""
    if len(buf) == 0:
        raise DataError("experience replay needs a non-empty buffer")
    if not new_images:
        raise DataError("new generator data is empty")
    return fit(model, list(new_images) + list(buf.real) + buf.synthetic, cfg)


def lwf_step(model: DetectorModel, prev_model: DetectorModel, new_images: Sequence[LabeledImage],
             reals: Sequence[LabeledImage], cfg: TrainConfig, lambda_distill: float = 1.0,
             temperature: float = 2.0) -> DetectorModel:
    """BCE on the new task plus ``lambda * T^2 * BCE(sigma(z/T), sigma(z_prev/T))`` on each batch."""
    if lambda_distill < 0 or temperature <= 0:
        raise ConfigError("need lambda_distill >= 0 and temperature > 0", key="lwf")
    if not new_images or not reals:
        raise DataError("LwF needs new synthetic images and real images")
    if lambda_distill == 0:
        return fit(model, list(new_images) + list(reals), cfg)
    inv_t = 1.0 / temperature
    coeff = lambda_distill * temperature * temperature

    def distill(logits, patches):
        with T.no_grad():
            soft = sigmoid_np(prev_model.logits(T.Tensor(patches)).data * inv_t)
        return T.scale(T.bce_with_logits(T.scale(logits, inv_t), soft), coeff)

    return fit(model, list(new_images) + list(reals), cfg, extra_loss=distill)


def majority_vote_logits(experts: Sequence[DetectorModel], images: Sequence[LabeledImage]) -> np.ndarray:
    if not experts:
        raise ContractError("majority voting needs at least one expert")
    if any(e.head is None for e in experts):
        raise ContractError("every expert must keep its classifier head")
    return np.sum([predict_logits(e, images) for e in experts], axis=0)


def majority_vote_predict(experts: Sequence[DetectorModel], images: Sequence[LabeledImage]) -> np.ndarray:
    """sigmoid of the summed expert logits."""
    return sigmoid_np(majority_vote_logits(experts, images))
