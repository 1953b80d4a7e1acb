"""Volumetric neural-network primitives with analytic backward rules.

All operators take and return ``Tensor`` objects laid out as
``[N, C, D, H, W]``.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import Tensor, as_tensor

Triple = Union[int, Sequence[int]]


def _triple(v: Triple, name: str) -> Tuple[int, int, int]:
    if isinstance(v, (int, np.integer)):
        return (int(v),) * 3
    v = tuple(int(x) for x in v)
    if len(v) != 3:
        raise ValueError(f"{name} must be an int or a 3-tuple, got {v}")
    return v


def _check_5d(x: Tensor, name: str) -> None:
    if x.ndim != 5:
        raise ValueError(f"{name} must be 5-D [N, C, D, H, W], got shape {x.shape}")


def conv_output_extent(size: int, k: int, stride: int, pad: int, dilation: int) -> int:
    return (size + 2 * pad - dilation * (k - 1) - 1) // stride + 1


def conv3d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: Triple = 0,
    dilation: int = 1,
) -> Tensor:
    """3-D cross-correlation.

    ``weight`` has shape ``[K, C, kd, kh, kw]``; output extents follow
    ``floor((D + 2p - dilation*(k-1) - 1) / stride) + 1`` per axis.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    _check_5d(x, "conv3d input")
    if weight.ndim != 5:
        raise ValueError(f"conv3d weight must be 5-D [K, C, kd, kh, kw], got shape {weight.shape}")
    if stride < 1 or dilation < 1:
        raise ValueError(f"stride and dilation must be >= 1, got stride={stride}, dilation={dilation}")
    N, C, D, H, W = x.shape
    K, Cw, kd, kh, kw = weight.shape
    if Cw != C:
        raise ValueError(f"conv3d channel mismatch: input has {C} channels, weight expects {Cw}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (K,):
            raise ValueError(f"conv3d bias must have shape ({K},), got {bias.shape}")
    pd, ph, pw = _triple(padding, "padding")
    ks = (kd, kh, kw)
    out_ext = tuple(
        conv_output_extent(s, k, stride, p, dilation) for s, k, p in zip((D, H, W), ks, (pd, ph, pw))
    )
    if min(out_ext) < 1:
        raise ValueError(
            f"conv3d kernel {ks} (dilation {dilation}) does not fit padded input "
            f"{(D + 2 * pd, H + 2 * ph, W + 2 * pw)}"
        )
    Do, Ho, Wo = out_ext

    xp = x.data
    if pd or ph or pw:
        xp = np.pad(xp, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)))
    span = tuple(dilation * (k - 1) + 1 for k in ks)
    win = sliding_window_view(xp, span, axis=(2, 3, 4))
    win = win[:, :, : (Do - 1) * stride + 1 : stride, : (Ho - 1) * stride + 1 : stride,
              : (Wo - 1) * stride + 1 : stride, ::dilation, ::dilation, ::dilation]
    # one contiguous column matrix [N*Do*Ho*Wo, C*kd*kh*kw], reused by the weight gradient
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 4, 1, 5, 6, 7)).reshape(N * Do * Ho * Wo, -1)
    wd = weight.data
    w2 = wd.reshape(K, -1)
    out = cols @ w2.T
    if bias is not None:
        out += bias.data
    out = out.reshape(N, Do, Ho, Wo, K).transpose(0, 4, 1, 2, 3)

    padded_shape = xp.shape

    def backward(g):
        gx = gw = gb = None
        g2 = g.transpose(0, 2, 3, 4, 1).reshape(-1, K)
        if weight.requires_grad:
            gw = (g2.T @ cols).reshape(wd.shape)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=0)
        if x.requires_grad:
            # [C, kd, kh, kw, N, Do, Ho, Wo] so every offset slice is contiguous
            gcols = (w2.T @ g2.T).reshape(C, kd, kh, kw, N, Do, Ho, Wo)
            gxp = np.zeros((C, N) + padded_shape[2:])
            for i in range(kd):
                for j in range(kh):
                    for k in range(kw):
                        a, b, c = i * dilation, j * dilation, k * dilation
                        gxp[:, :, a : a + (Do - 1) * stride + 1 : stride,
                            b : b + (Ho - 1) * stride + 1 : stride,
                            c : c + (Wo - 1) * stride + 1 : stride] += gcols[:, i, j, k]
            gxp = gxp.transpose(1, 0, 2, 3, 4)
            gx = gxp[:, :, pd : pd + D, ph : ph + H, pw : pw + W]
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor._from_op(out, parents, backward, "conv3d")


def _pool_windows(xd: np.ndarray, k: int, stride: int) -> np.ndarray:
    win = sliding_window_view(xd, (k, k, k), axis=(2, 3, 4))
    return win[:, :, ::stride, ::stride, ::stride]


def max_pool3d(x: Tensor, kernel: int = 2, stride: Optional[int] = None) -> Tensor:
    """Max pooling without padding; gradient goes to the first maximum of each window."""
    x = as_tensor(x)
    _check_5d(x, "max_pool3d input")
    stride = kernel if stride is None else stride
    N, C, D, H, W = x.shape
    if min(D, H, W) < kernel:
        raise ValueError(f"max_pool3d kernel {kernel} larger than input extents {(D, H, W)}")
    win = _pool_windows(x.data, kernel, stride)
    Do, Ho, Wo = win.shape[2:5]
    flat = win.reshape(N, C, Do, Ho, Wo, -1)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape)
        di, rem = np.divmod(arg, kernel * kernel)
        hi, wi = np.divmod(rem, kernel)
        n, c, od, oh, ow = np.indices(arg.shape, sparse=True)
        idx = (n, c, od * stride + di, oh * stride + hi, ow * stride + wi)
        if stride >= kernel:
            gx[idx] = g  # windows are disjoint, indices unique
        else:
            np.add.at(gx, idx, g)
        return (gx,)

    return Tensor._from_op(out, (x,), backward, "max_pool3d")


def avg_pool3d(x: Tensor, kernel: int = 2, stride: Optional[int] = None) -> Tensor:
    x = as_tensor(x)
    _check_5d(x, "avg_pool3d input")
    stride = kernel if stride is None else stride
    N, C, D, H, W = x.shape
    if min(D, H, W) < kernel:
        raise ValueError(f"avg_pool3d kernel {kernel} larger than input extents {(D, H, W)}")
    win = _pool_windows(x.data, kernel, stride)
    out = win.mean(axis=(5, 6, 7))
    Do, Ho, Wo = out.shape[2:]
    shape = x.shape
    scale = 1.0 / kernel ** 3

    def backward(g):
        gx = np.zeros(shape)
        gs = g * scale
        for i in range(kernel):
            for j in range(kernel):
                for k in range(kernel):
                    gx[:, :, i : i + (Do - 1) * stride + 1 : stride,
                       j : j + (Ho - 1) * stride + 1 : stride,
                       k : k + (Wo - 1) * stride + 1 : stride] += gs
        return (gx,)

    return Tensor._from_op(out, (x,), backward, "avg_pool3d")


@lru_cache(maxsize=64)
def _linear_interp_matrix(n_in: int, factor: int) -> np.ndarray:
    """Half-pixel-centred linear interpolation as an ``[n_out, n_in]`` matrix."""
    n_out = n_in * factor
    m = np.zeros((n_out, n_in))
    for o in range(n_out):
        src = (o + 0.5) / factor - 0.5
        src = min(max(src, 0.0), n_in - 1.0)
        lo = int(np.floor(src))
        hi = min(lo + 1, n_in - 1)
        t = src - lo
        m[o, lo] += 1.0 - t
        m[o, hi] += t
    m.setflags(write=False)
    return m


def upsample3d(x: Tensor, factor: int = 2, mode: str = "trilinear") -> Tensor:
    """Integer-factor upsampling, ``mode`` in {"nearest", "trilinear"}."""
    x = as_tensor(x)
    _check_5d(x, "upsample3d input")
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    N, C, D, H, W = x.shape
    if mode == "nearest":
        out = x.data.repeat(factor, axis=2).repeat(factor, axis=3).repeat(factor, axis=4)

        def backward(g):
            g = g.reshape(N, C, D, factor, H, factor, W, factor)
            return (g.sum(axis=(3, 5, 7)),)

        return Tensor._from_op(out, (x,), backward, "upsample_nearest")
    if mode != "trilinear":
        raise ValueError(f"unknown upsample mode {mode!r}")
    md, mh, mw = (_linear_interp_matrix(s, factor) for s in (D, H, W))
    out = np.einsum("od,ncdhw->ncohw", md, x.data)
    out = np.einsum("ph,ncohw->ncopw", mh, out)
    out = np.einsum("qw,ncopw->ncopq", mw, out)

    def backward(g):
        g = np.einsum("qw,ncopq->ncopw", mw, g)
        g = np.einsum("ph,ncopw->ncohw", mh, g)
        g = np.einsum("od,ncohw->ncdhw", md, g)
        return (g,)

    return Tensor._from_op(out, (x,), backward, "upsample_trilinear")


def instance_norm(
    x: Tensor, gamma: Optional[Tensor] = None, beta: Optional[Tensor] = None, eps: float = 1e-5
) -> Tensor:
    """Per-sample, per-channel normalisation over the spatial axes."""
    x = as_tensor(x)
    _check_5d(x, "instance_norm input")
    C = x.shape[1]
    axes = (2, 3, 4)
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = np.ones((1, C, 1, 1, 1)) if gamma is None else as_tensor(gamma).data.reshape(1, C, 1, 1, 1)
    out = xhat * gd
    if beta is not None:
        out = out + as_tensor(beta).data.reshape(1, C, 1, 1, 1)

    def backward(g):
        gx = ggamma = gbeta = None
        if x.requires_grad:
            gh = g * gd
            gx = inv * (gh - gh.mean(axis=axes, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=axes, keepdims=True))
        if gamma is not None and gamma.requires_grad:
            ggamma = (g * xhat).sum(axis=(0, 2, 3, 4))
        if beta is not None and beta.requires_grad:
            gbeta = g.sum(axis=(0, 2, 3, 4))
        return gx, ggamma, gbeta

    parents = [x]
    if gamma is not None:
        parents.append(as_tensor(gamma))
    if beta is not None:
        parents.append(as_tensor(beta))

    def routed(g):
        gx, gg, gb = backward(g)
        res = [gx]
        if gamma is not None:
            res.append(gg)
        if beta is not None:
            res.append(gb)
        return tuple(res)

    return Tensor._from_op(out, parents, routed, "instance_norm")
