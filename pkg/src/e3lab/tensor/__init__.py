"""Minimal float32 tensor engine with reverse-mode autodiff and ADAM."""
from .core import (DTYPE, ComputationTape, Tensor, backward, get_dtype, is_grad_enabled, no_grad,
                   precision, tensor)
from .ops import (
    add, bce_with_logits, concat, conv2d, elementwise, exp, global_avg_pool, hadamard,
    layer_norm, linear, log, matmul, max_pool2d, mean, mul, relu, reshape, scale, sigmoid,
    softmax, softmax_attention, sub, sum, tanh, transpose,
)
from .optim import Adam, AdamState, adam_step

__all__ = [
    "DTYPE", "ComputationTape", "Tensor", "backward", "get_dtype", "is_grad_enabled", "no_grad",
    "precision", "tensor",
    "add", "bce_with_logits", "concat", "conv2d", "elementwise", "exp", "global_avg_pool",
    "hadamard", "layer_norm", "linear", "log", "matmul", "max_pool2d", "mean", "mul", "relu",
    "reshape", "scale", "sigmoid", "softmax", "softmax_attention", "sub", "sum", "tanh",
    "transpose", "Adam", "AdamState", "adam_step",
]
