"""Analytic float32 gradients against central finite differences (rel. err <= 1e-3).

27 primitives and layers x 3 seeds, plus both composed losses (15 configurations).
"""
import numpy as np
import pytest

from e3lab import tensor as T
from e3lab.detector import build_detector, class_weights
from e3lab.e3 import FusionConfig, build_ekfn
from e3lab.tensor.nn import MultiHeadSelfAttention, TransformerEncoder
from gradcheck import max_relative_error

TOL = 1e-3
SEEDS = [0, 1, 2]


def leaf(rng, *shape, low=None):
    x = rng.standard_normal(shape)
    if low is not None:  # keep away from kinks / domain edges
        x = np.sign(x) * (np.abs(x) + low)
    return T.tensor(x.astype(np.float32), requires_grad=True)


def case(build):
    """Wrap a builder ``rng -> (forward, tensors)`` into ``rng -> (loss_fn, tensors)``.

    The loss is ``sum(out * R)`` with a fixed random R so no gradient cancels by symmetry.
    """
    def make(rng):
        fwd, tensors = build(rng)
        r = np.random.default_rng(99).standard_normal(fwd().shape).astype(np.float32)
        weights = T.tensor(r)
        return (lambda: (fwd() * weights).sum()), tensors
    return make


def _binary(op, sa, sb):
    def build(rng):
        a, b = leaf(rng, *sa), leaf(rng, *sb)
        return (lambda: op(a, b)), [a, b]
    return build


def _unary(op, low=None, positive=False):
    def build(rng):
        a = leaf(rng, 3, 4, low=low)
        if positive:
            a.data = np.abs(a.data) + 0.5
        return (lambda: op(a)), [a]
    return build


def _conv(stride, padding, bias, size=7):
    def build(rng):
        x, w = leaf(rng, 2, 2, size, size), leaf(rng, 3, 2, 3, 3)
        b = leaf(rng, 3) if bias else None
        ts = [x, w] + ([b] if bias else [])
        return (lambda: T.conv2d(x, w, b, stride=stride, padding=padding)), ts
    return build


def _max_pool(rng):
    # distinct values spaced well beyond eps so the arg-max never switches
    x = T.tensor((rng.permutation(64).reshape(1, 1, 8, 8) * 0.05).astype(np.float32), requires_grad=True)
    return (lambda: T.max_pool2d(x)), [x]


def _layer_norm(rng):
    x, g, b = leaf(rng, 3, 5), leaf(rng, 5), leaf(rng, 5)
    return (lambda: T.layer_norm(x, g, b)), [x, g, b]


def _attention(rng):
    q, k, v = leaf(rng, 2, 3, 4), leaf(rng, 2, 3, 4), leaf(rng, 2, 3, 4)
    return (lambda: T.softmax_attention(q, k, v)), [q, k, v]


def _linear(rng):
    x, w, b = leaf(rng, 4, 3), leaf(rng, 3, 5), leaf(rng, 5)
    return (lambda: T.linear(x, w, b)), [x, w, b]


def _concat(rng):
    a, b = leaf(rng, 2, 3), leaf(rng, 2, 4)
    return (lambda: T.concat([a, b], axis=1)), [a, b]


def _reshape_transpose(rng):
    a = leaf(rng, 2, 3, 4)
    return (lambda: a.reshape(6, 4).transpose(1, 0)), [a]


def _bce(rng):
    z = leaf(rng, 8)
    targets = rng.uniform(0, 1, 8).astype(np.float32)
    w = rng.uniform(0.2, 3.0, 8).astype(np.float32)
    return (lambda: T.bce_with_logits(z, targets, w).reshape(1)), [z]


def _mhsa(rng):
    layer = MultiHeadSelfAttention(8, 2, rng)
    x = leaf(rng, 2, 3, 8)
    return (lambda: layer(x)), [x] + layer.parameters()


def _encoder(rng):
    enc = TransformerEncoder(8, 2, 2, 16, rng)
    x = leaf(rng, 2, 3, 8)
    return (lambda: enc(x)), [x] + enc.parameters()


PRIMITIVES = {
    "add_broadcast": _binary(T.add, (3, 4), (4,)),
    "sub_broadcast": _binary(T.sub, (2, 3, 4), (3, 1)),
    "mul_broadcast": _binary(T.mul, (3, 4), (1, 4)),
    "hadamard": _binary(T.hadamard, (3, 4), (3, 4)),
    "matmul": _binary(T.matmul, (3, 4), (4, 2)),
    "matmul_batched": _binary(T.matmul, (2, 3, 4), (2, 4, 5)),
    "scale": _unary(lambda a: T.scale(a, -1.7)),
    "relu": _unary(T.relu, low=0.05),
    "sigmoid": _unary(T.sigmoid),
    "tanh": _unary(T.tanh),
    "exp": _unary(T.exp),
    "log": _unary(T.log, positive=True),
    "sum_axis": _unary(lambda a: T.sum(a, axis=1)),
    "mean_keepdims": _unary(lambda a: T.mean(a, axis=0, keepdims=True)),
    "softmax": _unary(T.softmax),
    "reshape_transpose": _reshape_transpose,
    "concat": _concat,
    "linear": _linear,
    "layer_norm": _layer_norm,
    "softmax_attention": _attention,
    "conv2d_pad1": _conv(1, 1, True),
    "conv2d_stride3": _conv(3, 0, False, size=9),
    "max_pool2d": _max_pool,
    "global_avg_pool": lambda rng: ((lambda x: (lambda: T.global_avg_pool(x), [x]))(leaf(rng, 2, 3, 4, 4))),
    "bce_weighted_soft": _bce,
    "multi_head_attention": _mhsa,
    "transformer_encoder": _encoder,
}


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradient(name, seed):
    rng = np.random.default_rng(seed)
    loss_fn, tensors = case(PRIMITIVES[name])(rng)
    assert max_relative_error(loss_fn, tensors, seed=seed) <= TOL


def detector_loss(seed, scheme):
    """Class-weighted BCE of a detector on random patches: the expert-training loss."""
    rng = np.random.default_rng(seed)
    model = build_detector("tiny", 8, seed=seed, patch_size=16)
    x = T.tensor(rng.uniform(0, 1, (6, 1, 16, 16)).astype(np.float32))
    labels = np.array([1, 0, 0, 1, 0, 0], np.float32)
    w_pos, w_neg = class_weights(labels, scheme)
    weights = np.where(labels == 1, w_pos, w_neg).astype(np.float32)
    return (lambda: T.bce_with_logits(model.logits(x), labels, weights)), model.parameters()


def fusion_loss(seed, variant):
    """Plain BCE of the fusion network on frozen expert embeddings of real images."""
    rng = np.random.default_rng(seed)
    experts = [build_detector("tiny", 8, seed=seed + i, patch_size=16) for i in range(3)]
    images = T.tensor(rng.uniform(0, 1, (5, 1, 16, 16)).astype(np.float32))
    with T.no_grad():
        tokens = np.stack([e.embedder(images).data for e in experts], axis=1)
    ekfn = build_ekfn(3, 8, FusionConfig(n_layers=1, heads=2, mlp_hidden=16, variant=variant), seed=seed)
    labels = np.array([1, 0, 1, 0, 0], np.float32)
    x = T.tensor(tokens)
    return (lambda: T.bce_with_logits(ekfn(x), labels)), ekfn.parameters()


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("scheme", ["paper", "inverse"])
def test_detector_loss_gradient(seed, scheme):
    loss_fn, params = detector_loss(seed, scheme)
    assert max_relative_error(loss_fn, params, max_coords=24, seed=seed) <= TOL


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("variant", ["full", "no_weighting", "mlp_only"])
def test_fusion_loss_gradient(seed, variant):
    loss_fn, params = fusion_loss(seed, variant)
    assert max_relative_error(loss_fn, params, max_coords=24, seed=seed) <= TOL


def test_float64_mode_is_scoped():
    with T.precision(np.float64):
        assert T.tensor([1.0]).data.dtype == np.float64
    assert T.tensor([1.0]).data.dtype == np.float32
