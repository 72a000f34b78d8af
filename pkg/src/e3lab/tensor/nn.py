"""Parameter containers and the layers used by the detector and the fusion network."""
from __future__ import annotations

import math
from collections import OrderedDict
from typing import Iterator, Optional

import numpy as np

from ..errors import FormatError
from . import ops
from .core import Tensor, get_dtype


class Parameter(Tensor):
    """Trainable tensor; stays a parameter (and in checkpoints) when frozen."""

    __slots__ = ()


def parameter(data) -> Parameter:
    return Parameter(np.asarray(data, dtype=get_dtype()), requires_grad=True)


class Module:
    """Minimal module: ``Parameter`` attributes are parameters, attributes that
    are Modules (or lists of Modules) are children. Registration order defines
    the parameter order used by checkpoints."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, p.data.copy()) for n, p in self.named_parameters())

    def load_state_dict(self, state) -> None:
        own = dict(self.named_parameters())
        if set(own) != set(state):
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            raise FormatError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=get_dtype())
            if arr.shape != p.shape:
                raise FormatError(f"{name}: shape {arr.shape} != expected {p.shape}")
            p.data = arr.copy()
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def he_normal(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(get_dtype())


def xavier_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(get_dtype())


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, init: str = "he"):
        if init == "he":
            w = he_normal(rng, (n_in, n_out), n_in)
        else:
            w = xavier_uniform(rng, (n_in, n_out), n_in, n_out)
        self.weight = parameter(w)
        self.bias = parameter(np.zeros(n_out))

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, padding: int = 0):
        self.weight = parameter(he_normal(rng, (c_out, c_in, k, k), c_in * k * k))
        self.bias = parameter(np.zeros(c_out))
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=1, padding=self.padding)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gamma = parameter(np.ones(d))
        self.beta = parameter(np.zeros(d))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)


class MultiHeadSelfAttention(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        if d % heads:
            raise ValueError(f"d_model {d} not divisible by {heads} heads")
        self.heads = heads
        self.qkv = Linear(d, 3 * d, rng, init="xavier")
        self.proj = Linear(d, d, rng, init="xavier")

    def forward(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        h = self.heads
        qkv = self.qkv(x).reshape(b, n, 3, h, d // h).transpose(2, 0, 3, 1, 4)
        q, k, v = (_take(qkv, i) for i in range(3))
        att = ops.softmax_attention(q, k, v)  # (b, h, n, dh)
        merged = att.transpose(0, 2, 1, 3).reshape(b, n, d)
        return self.proj(merged)


def _take(t: Tensor, i: int) -> Tensor:
    """``t[i]`` along the first axis, differentiable."""
    data = t.data[i]

    def bw(g):
        full = np.zeros_like(t.data)
        full[i] = g
        return (full,)

    return Tensor._from_op(data, (t,), bw)


class TransformerBlock(Module):
    """Pre-norm encoder block: x + MHA(LN(x)), then x + FF(LN(x))."""

    def __init__(self, d: int, heads: int, ff_width: int, rng: np.random.Generator):
        self.ln1 = LayerNorm(d)
        self.attn = MultiHeadSelfAttention(d, heads, rng)
        self.ln2 = LayerNorm(d)
        self.ff1 = Linear(d, ff_width, rng)
        self.ff2 = Linear(ff_width, d, rng, init="xavier")

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.ff2(ops.relu(self.ff1(self.ln2(x))))


class TransformerEncoder(Module):
    def __init__(self, d: int, n_layers: int, heads: int, ff_width: int, rng: np.random.Generator):
        self.layers = [TransformerBlock(d, heads, ff_width, rng) for _ in range(n_layers)]
        self.ln_out = LayerNorm(d)

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return self.ln_out(x)


def copy_module(module: Module):
    """Deep copy with fresh parameter tensors (no shared storage, no grads)."""
    import copy

    clone = copy.deepcopy(module)
    for p in clone.parameters():
        p.grad = None
    return clone
