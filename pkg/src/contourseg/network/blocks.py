"""Building blocks of the toy PDANet.

Each block comes in two halves: a ``*_shapes`` function listing the
parameters it needs under a name prefix, and a forward function reading them
back from a :class:`ModelParams`. Parameter names look like
``"enc0.se.fc1.w"``.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Dict, List, Sequence, Tuple

import numpy as np

from ..tensor import (
    Tensor,
    as_tensor,
    concat,
    conv3d,
    getitem,
    instance_norm,
    max_,
    max_pool3d,
    maximum,
    mean,
    min_,
    mul,
    relu,
    sigmoid,
    softmax,
    upsample3d,
)
from .config import ModelParams

Shape = Tuple[int, ...]
ShapeList = List[Tuple[str, Shape]]


def _conv_shapes(prefix: str, cin: int, cout: int, k: int, bias: bool = True) -> ShapeList:
    out = [(f"{prefix}.w", (cout, cin, k, k, k))]
    if bias:
        out.append((f"{prefix}.b", (cout,)))
    return out


def _conv(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    w = params[f"{prefix}.w"]
    b = params[f"{prefix}.b"] if f"{prefix}.b" in params else None
    return conv3d(x, w, b, padding=w.shape[2] // 2)


def _check_channels(x: Tensor, expected: int, what: str) -> None:
    if x.ndim != 5:
        raise ValueError(f"{what} expects [N, C, D, H, W] input, got shape {x.shape}")
    if x.shape[1] != expected:
        raise ValueError(f"{what} channel mismatch: got {x.shape[1]} channels, parameters expect {expected}")


# -- convolution module ---------------------------------------------------------
def conv_module_shapes(prefix: str, cin: int, cout: int) -> ShapeList:
    return _conv_shapes(f"{prefix}.conv", cin, cout, 3) + [
        (f"{prefix}.norm.gamma", (cout,)),
        (f"{prefix}.norm.beta", (cout,)),
    ]


def conv_module(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    """3x3x3 convolution, instance normalisation, ReLU."""
    _check_channels(x, params[f"{prefix}.conv.w"].shape[1], "conv module")
    h = _conv(x, params, f"{prefix}.conv")
    return relu(instance_norm(h, params[f"{prefix}.norm.gamma"], params[f"{prefix}.norm.beta"]))


# -- squeeze and excitation -----------------------------------------------------
def se_hidden(channels: int, reduction: int) -> int:
    return max(1, channels // reduction)


def se_shapes(prefix: str, channels: int, reduction: int) -> ShapeList:
    hid = se_hidden(channels, reduction)
    return _conv_shapes(f"{prefix}.fc1", channels, hid, 1) + _conv_shapes(f"{prefix}.fc2", hid, channels, 1)


def se_gates(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    """Per-sample, per-channel gates in (0, 1), shaped ``[N, C, 1, 1, 1]``."""
    _check_channels(x, params[f"{prefix}.fc1.w"].shape[1], "SE block")
    pooled = mean(x, axis=(2, 3, 4), keepdims=True)
    hidden = relu(_conv(pooled, params, f"{prefix}.fc1"))
    return sigmoid(_conv(hidden, params, f"{prefix}.fc2"))


def se_block(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    return mul(x, se_gates(x, params, prefix))


# -- receptive field block --------------------------------------------------------
def rfb_shapes(prefix: str, cin: int, cout: int, kernels: Sequence[int]) -> ShapeList:
    shapes: ShapeList = []
    for k in kernels:
        shapes += _conv_shapes(f"{prefix}.branch{k}", cin, cout, k)
    shapes += _conv_shapes(f"{prefix}.fuse", cout * len(kernels), cout, 1)
    shapes += _conv_shapes(f"{prefix}.res", cin, cout, 1)
    return shapes


def rfb_block(x: Tensor, params: ModelParams, prefix: str, kernels: Sequence[int]) -> Tensor:
    """Parallel same-padded branches of different kernel sizes, fused and added to a projected input."""
    _check_channels(x, params[f"{prefix}.res.w"].shape[1], "RFB")
    branches = [relu(_conv(x, params, f"{prefix}.branch{k}")) for k in kernels]
    fused = _conv(concat(branches, axis=1), params, f"{prefix}.fuse")
    return fused + _conv(x, params, f"{prefix}.res")


# -- holistic attention -------------------------------------------------------------
@lru_cache(maxsize=16)
def gaussian_kernel_1d(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (r / sigma) ** 2)
    g /= g.sum()
    g.setflags(write=False)
    return g


def gaussian_blur(s: Tensor, size: int, sigma: float) -> Tensor:
    """Separable zero-padded Gaussian blur of a single-channel volume (fixed weights, no bias)."""
    g = gaussian_kernel_1d(size, sigma)
    half = size // 2
    out = s
    for axis in range(3):
        kshape = [1, 1, 1, 1, 1]
        kshape[2 + axis] = size
        pad = [0, 0, 0]
        pad[axis] = half
        out = conv3d(out, g.reshape(kshape), padding=tuple(pad))
    return out


def minmax_normalise(x: Tensor) -> Tensor:
    """Rescale each sample to [0, 1]; a constant sample maps to zeros."""
    axes = tuple(range(1, x.ndim))
    lo = min_(x, axis=axes, keepdims=True)
    hi = max_(x, axis=axes, keepdims=True)
    span = hi - lo
    guard = (span.data == 0.0).astype(np.float64)
    return (x - lo) / (span + guard)


def holistic_attention(saliency: Tensor, size: int = 11, sigma: float = 2.0) -> Tensor:
    """Expand a saliency map: ``max(normalise(blur(S)), S)``."""
    saliency = as_tensor(saliency)
    if saliency.ndim != 5 or saliency.shape[1] != 1:
        raise ValueError(f"saliency must be [N, 1, D, H, W], got shape {saliency.shape}")
    return maximum(saliency, minmax_normalise(gaussian_blur(saliency, size, sigma)))


# -- partial decoder --------------------------------------------------------------
def partial_decoder_shapes(prefix: str, c1: int, c2: int, c3: int, width: int) -> ShapeList:
    return (
        _conv_shapes(f"{prefix}.fuse2", c2 + c3, width, 3)
        + _conv_shapes(f"{prefix}.fuse1", c1 + width, width, 3)
        + _conv_shapes(f"{prefix}.out", width, 1, 1)
    )


def check_pyramid(x1: Tensor, x2: Tensor, x3: Tensor) -> None:
    for name, t in (("x1", x1), ("x2", x2), ("x3", x3)):
        if t.ndim != 5:
            raise ValueError(f"{name} must be 5-D [N, C, D, H, W], got shape {t.shape}")
    s1, s2, s3 = (tuple(t.shape[2:]) for t in (x1, x2, x3))
    if x1.shape[0] != x2.shape[0] or x2.shape[0] != x3.shape[0]:
        raise ValueError("pyramid levels must share the batch size")
    if s1 != tuple(2 * v for v in s2) or s2 != tuple(2 * v for v in s3):
        raise ValueError(f"pyramid extents must halve per level, got {s1}, {s2}, {s3}")


def partial_decoder(x1: Tensor, x2: Tensor, x3: Tensor, params: ModelParams, prefix: str) -> Tensor:
    """Fuse three scales coarse-to-fine into a one-channel saliency map at ``x1``'s resolution."""
    check_pyramid(x1, x2, x3)
    h2 = relu(_conv(concat([x2, upsample3d(x3, 2)], axis=1), params, f"{prefix}.fuse2"))
    h1 = relu(_conv(concat([x1, upsample3d(h2, 2)], axis=1), params, f"{prefix}.fuse1"))
    return _conv(h1, params, f"{prefix}.out")


# -- partial decoder module -------------------------------------------------------
def pdm_shapes(prefix: str, c1: int, c2: int, c3: int, width: int, kernels: Sequence[int]) -> ShapeList:
    return (
        rfb_shapes(f"{prefix}.rfb1", c1, width, kernels)
        + rfb_shapes(f"{prefix}.rfb2", c2, width, kernels)
        + rfb_shapes(f"{prefix}.rfb3", c3, width, kernels)
        + partial_decoder_shapes(f"{prefix}.pd1", width, width, width, width)
        + rfb_shapes(f"{prefix}.cascade1", c1, width, kernels)
        + rfb_shapes(f"{prefix}.cascade2", width, width, kernels)
        + rfb_shapes(f"{prefix}.cascade3", width, width, kernels)
        + partial_decoder_shapes(f"{prefix}.pd2", width, width, width, width)
    )


def pdm(x1: Tensor, x2: Tensor, x3: Tensor, params: ModelParams, prefix: str, kernels: Sequence[int],
        ham_kernel: int = 11, ham_sigma: float = 2.0, return_intermediates: bool = False):
    """Two-pass partial decoder module.

    The first pass turns per-scale RFB features into a saliency map, expanded
    by holistic attention. The finest input is multiplied by that map and fed
    through an RFB cascade with pooling in between, and a second (unshared)
    partial decoder produces the module output.
    """
    check_pyramid(x1, x2, x3)
    r1 = rfb_block(x1, params, f"{prefix}.rfb1", kernels)
    r2 = rfb_block(x2, params, f"{prefix}.rfb2", kernels)
    r3 = rfb_block(x3, params, f"{prefix}.rfb3", kernels)
    s1 = partial_decoder(r1, r2, r3, params, f"{prefix}.pd1")
    att = holistic_attention(s1, ham_kernel, ham_sigma)
    refined = mul(x1, att)
    y1 = rfb_block(refined, params, f"{prefix}.cascade1", kernels)
    y2 = rfb_block(max_pool3d(y1, 2), params, f"{prefix}.cascade2", kernels)
    y3 = rfb_block(max_pool3d(y2, 2), params, f"{prefix}.cascade3", kernels)
    out = partial_decoder(y1, y2, y3, params, f"{prefix}.pd2")
    if return_intermediates:
        return out, {"saliency": s1, "attention": att, "refined": refined}
    return out


# -- channel-wise attention module --------------------------------------------------
def cwam_shapes(prefix: str, channels: int, kernel: int, reduction: int) -> ShapeList:
    return _conv_shapes(f"{prefix}.att", 2 * channels, 2, kernel) + se_shapes(f"{prefix}.se", channels, reduction)


def cwam(f_e: Tensor, f_d: Tensor, params: ModelParams, prefix: str, return_weights: bool = False):
    """Voxelwise convex blend ``w1 * F_e + w2 * F_d`` (weights from a 2-way softmax), then SE."""
    f_e, f_d = as_tensor(f_e), as_tensor(f_d)
    if f_e.shape != f_d.shape:
        raise ValueError(f"CWAM inputs must have the same shape, got {f_e.shape} and {f_d.shape}")
    _check_channels(f_e, params[f"{prefix}.att.w"].shape[1] // 2, "CWAM")
    weights = softmax(_conv(concat([f_e, f_d], axis=1), params, f"{prefix}.att"), axis=1)
    w1 = getitem(weights, (slice(None), slice(0, 1)))
    w2 = getitem(weights, (slice(None), slice(1, 2)))
    fused = mul(w1, f_e) + mul(w2, f_d)
    out = se_block(fused, params, f"{prefix}.se")
    if return_weights:
        return out, {"weights": weights, "fused": fused}
    return out


def init_params(shapes: ShapeList, seed: int) -> ModelParams:
    """He-normal convolution weights, zero biases and shifts, unit norm scales."""
    rng = np.random.default_rng(seed)
    tensors: Dict[str, Tensor] = {}
    for name, shape in shapes:
        if name in tensors:
            raise ValueError(f"duplicate parameter name {name!r}")
        if name.endswith(".w"):
            fan_in = int(np.prod(shape[1:]))
            data = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        elif name.endswith(".gamma"):
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        tensors[name] = Tensor(data, requires_grad=True)
    return ModelParams(tensors)
