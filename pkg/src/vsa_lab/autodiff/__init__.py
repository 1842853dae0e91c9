"""Minimal numpy tensor engine with reverse-mode differentiation."""

from .ops import (
    LEAKY_SLOPE,
    add,
    add_const,
    concat,
    cross_entropy,
    div,
    elementwise_map,
    exp,
    gelu,
    getitem,
    layer_norm,
    leaky_relu,
    linear,
    log_softmax,
    matmul,
    mean,
    mul,
    mul_const,
    pad_spatial,
    reshape,
    roll,
    scale,
    softmax,
    sub,
    sum,
    swapaxes,
    take,
    transpose,
)
from .spatial import avg_pool2d, depthwise_conv2d, grid_sample_bilinear
from .tensor import DEFAULT_DTYPE, Tensor, as_tensor, backward, is_grad_enabled, no_grad

__all__ = [
    "DEFAULT_DTYPE", "LEAKY_SLOPE", "Tensor", "add", "add_const", "as_tensor", "avg_pool2d",
    "backward", "concat", "cross_entropy", "depthwise_conv2d", "div", "elementwise_map", "exp",
    "gelu", "getitem", "grid_sample_bilinear", "is_grad_enabled", "layer_norm", "leaky_relu",
    "linear", "log_softmax", "matmul", "mean", "mul", "mul_const", "no_grad", "pad_spatial",
    "reshape", "roll", "scale", "softmax", "sub", "sum", "swapaxes", "take", "transpose",
]
