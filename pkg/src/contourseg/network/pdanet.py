"""Full toy PDANet: SE encoder, partial decoder module at the bottleneck, CWAM decoder."""

from __future__ import annotations

from typing import List

from ..tensor import Tensor, as_tensor, avg_pool3d, conv3d, max_pool3d, upsample3d
from .blocks import (
    ShapeList,
    conv_module,
    conv_module_shapes,
    cwam,
    cwam_shapes,
    init_params,
    pdm,
    pdm_shapes,
    se_block,
    se_shapes,
)
from .config import ModelParams, NetworkConfig


def _pdm_taps(cfg: NetworkConfig) -> List[int]:
    """Channel counts of the three deepest encoder outputs (bottleneck included)."""
    chans = [cfg.channels(l) for l in range(cfg.levels + 1)]
    return chans[-3:]


def param_shapes(cfg: NetworkConfig) -> ShapeList:
    shapes: ShapeList = []
    cin = cfg.in_channels
    for l in range(cfg.levels):
        c = cfg.channels(l)
        shapes += conv_module_shapes(f"enc{l}", cin, c)
        shapes += se_shapes(f"enc{l}.se", c, cfg.se_reduction)
        cin = c
    cb = cfg.channels(cfg.levels)
    shapes += conv_module_shapes("bottleneck", cin, cb)
    c1, c2, c3 = _pdm_taps(cfg)
    width = cfg.base_channels
    shapes += pdm_shapes("pdm", c1, c2, c3, width, cfg.rfb_branch_kernels)
    shapes += [("pdm_proj.w", (cb, 1, 1, 1, 1)), ("pdm_proj.b", (cb,))]
    for l in reversed(range(cfg.levels)):
        c = cfg.channels(l)
        shapes += [(f"dec{l}.reduce.w", (c, 2 * c, 1, 1, 1)), (f"dec{l}.reduce.b", (c,))]
        shapes += cwam_shapes(f"dec{l}.cwam", c, cfg.cwam_kernel, cfg.se_reduction)
        shapes += conv_module_shapes(f"dec{l}", c, c)
    shapes += [("head.w", (cfg.num_classes, cfg.base_channels, 1, 1, 1)), ("head.b", (cfg.num_classes,))]
    return shapes


def init_model(cfg: NetworkConfig, seed: int = 0) -> ModelParams:
    return init_params(param_shapes(cfg), seed)


def check_params(params: ModelParams, cfg: NetworkConfig) -> None:
    """Raise if ``params`` does not match the layout implied by ``cfg``."""
    expected = dict(param_shapes(cfg))
    missing = sorted(set(expected) - set(params))
    extra = sorted(set(params) - set(expected))
    if missing or extra:
        raise ValueError(f"parameters do not match the network config (missing {missing[:3]}, unexpected {extra[:3]})")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ValueError(f"parameter {name!r} has shape {params[name].shape}, config implies {shape}")


def pdanet_forward(volume, params: ModelParams, cfg: NetworkConfig) -> Tensor:
    """Logits ``[N, num_classes, D, H, W]`` for an intensity batch ``[N, in_channels, D, H, W]``."""
    x = as_tensor(volume)
    if x.ndim != 5 or x.shape[1] != cfg.in_channels:
        raise ValueError(f"expected input [N, {cfg.in_channels}, D, H, W], got shape {x.shape}")
    d = cfg.divisor
    if any(s % d for s in x.shape[2:]):
        raise ValueError(
            f"spatial extents {x.shape[2:]} must be divisible by 2^levels = {d} (levels={cfg.levels})"
        )

    skips = []
    for l in range(cfg.levels):
        x = se_block(conv_module(x, params, f"enc{l}"), params, f"enc{l}.se")
        skips.append(x)
        x = max_pool3d(x, 2)
    b = conv_module(x, params, "bottleneck")

    x1, x2, x3 = (skips + [b])[-3:]
    sal = pdm(x1, x2, x3, params, "pdm", cfg.rfb_branch_kernels, cfg.ham_kernel, cfg.ham_sigma)
    sal = avg_pool3d(sal, sal.shape[2] // b.shape[2])
    f = b + conv3d(sal, params["pdm_proj.w"], params["pdm_proj.b"])

    for l in reversed(range(cfg.levels)):
        f = upsample3d(f, 2, "trilinear")
        f = conv3d(f, params[f"dec{l}.reduce.w"], params[f"dec{l}.reduce.b"])
        f = cwam(skips[l], f, params, f"dec{l}.cwam")
        f = conv_module(f, params, f"dec{l}")
    return conv3d(f, params["head.w"], params["head.b"])
