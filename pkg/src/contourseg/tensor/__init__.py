"""Minimal reverse-mode autodiff over dense float64 arrays."""

from .core import (
    NonFiniteError,
    Tensor,
    add,
    as_tensor,
    clamp_min,
    concat,
    div,
    exp,
    getitem,
    is_grad_enabled,
    log,
    log_softmax,
    max_,
    maximum,
    mean,
    min_,
    mul,
    neg,
    no_grad,
    power,
    relu,
    reshape,
    sigmoid,
    softmax,
    split,
    sub,
    sum_,
    transpose,
)
from .gradcheck import directional_gradcheck, gradcheck, numerical_gradient, relative_error
from .nn_ops import avg_pool3d, conv3d, instance_norm, max_pool3d, upsample3d

__all__ = [
    "NonFiniteError", "Tensor", "add", "as_tensor", "avg_pool3d", "clamp_min", "concat",
    "conv3d", "directional_gradcheck", "div", "exp", "getitem", "gradcheck", "instance_norm",
    "is_grad_enabled", "log", "log_softmax", "max_", "max_pool3d", "maximum", "mean", "min_",
    "mul", "neg", "no_grad", "numerical_gradient", "power", "relative_error", "relu", "reshape",
    "sigmoid", "softmax", "split", "sub", "sum_", "transpose", "upsample3d",
]
