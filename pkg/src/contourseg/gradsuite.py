"""Seeded finite-difference checks over every loss, every block and the full toy model.

Used by ``contourseg gradcheck`` and the acceptance tests. Each check returns
a dict ``{"name", "rel_err", "tol", "passed"}``.
"""

from __future__ import annotations

from typing import Callable, Dict, List

import numpy as np

from .losses import LOSSES, LossConfig, contour_maps_for
from .network import NetworkConfig, init_model, pdanet_forward
from .network import blocks as B
from .tensor import Tensor, directional_gradcheck, gradcheck

LOSS_TOL = 1e-6
BLOCK_TOL = 1e-6
MODEL_TOL = 1e-4
TARGETS = ("losses", "blocks", "model", "all")


def blob_labels(rng, M: int, shape) -> np.ndarray:
    """Overlapping random balls, so every class has both interior and contour voxels."""
    labels = np.zeros(shape, dtype=np.int64)
    zz, yy, xx = np.indices(shape)
    for j in range(1, M):
        c = rng.integers(1, np.array(shape) - 1)
        r = rng.uniform(1.5, 3.0)
        labels[(zz - c[0]) ** 2 + (yy - c[1]) ** 2 + (xx - c[2]) ** 2 <= r * r] = j
    return labels


def generic_point(params, rng):
    """Jitter the zero-initialised biases and shifts off ReLU kinks."""
    for name, t in params.items():
        if not name.endswith(".w"):
            t.data[...] += 0.1 * rng.standard_normal(t.shape)
    return params


def _record(name: str, err: float, tol: float) -> dict:
    return {"name": name, "rel_err": float(err), "tol": tol, "passed": bool(err < tol)}


def _projected(fn: Callable[[], Tensor], rng) -> Callable[[], Tensor]:
    proj = {}

    def scalar():
        out = fn()
        if isinstance(out, tuple):
            out = out[0]
        if "p" not in proj:
            proj["p"] = rng.standard_normal(out.shape)
        return (out * proj["p"]).sum()

    return scalar


def _block(name, fn, inputs, params, rng, skip=()) -> dict:
    generic_point(params, rng)
    scalar = _projected(fn, rng)
    scalar()
    tensors = list(inputs) + [t for n, t in params.items() if n not in skip]
    return _record(name, max(gradcheck(scalar, tensors).values()), BLOCK_TOL)


def _rand(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def check_losses(seed: int = 0) -> List[dict]:
    cfg = LossConfig()
    out = []
    for M in (2, 4):
        rng = np.random.default_rng([seed, M])
        labels = blob_labels(rng, M, (8, 8, 8))[None]
        z = Tensor(rng.standard_normal((1, M, 8, 8, 8)), requires_grad=True)
        maps = contour_maps_for(labels, M, cfg)
        for name in sorted(LOSSES):
            fn = LOSSES[name]
            err = gradcheck(lambda: fn(z, labels, maps, cfg), [z])[0]
            out.append(_record(f"loss.{name}.M{M}", err, LOSS_TOL))
    return out


def check_blocks(seed: int = 0) -> List[dict]:
    rng = np.random.default_rng([seed, 10])
    K = (1, 3, 5)
    res = []

    p = B.init_params(B.se_shapes("se", 4, 4), 1)
    x = _rand(rng, 1, 4, 4, 4, 4)
    res.append(_block("block.se", lambda: B.se_block(x, p, "se"), [x], p, rng))

    p = B.init_params(B.rfb_shapes("r", 2, 2, K), 2)
    x = _rand(rng, 1, 2, 4, 4, 4)
    res.append(_block("block.rfb", lambda: B.rfb_block(x, p, "r", K), [x], p, rng))

    s = _rand(rng, 2, 1, 4, 4, 4)
    res.append(_block("block.ham", lambda: B.holistic_attention(s), [s], {}, rng))

    p = B.init_params(B.partial_decoder_shapes("pd", 2, 2, 2, 2), 3)
    xs = [_rand(rng, 1, 2, n, n, n) for n in (4, 2, 1)]
    res.append(_block("block.partial_decoder", lambda: B.partial_decoder(*xs, p, "pd"), xs, p, rng))

    p = B.init_params(B.pdm_shapes("m", 2, 2, 2, 2, (1, 3)), 4)
    xs = [_rand(rng, 1, 2, n, n, n) for n in (4, 2, 1)]
    res.append(_block("block.pdm", lambda: B.pdm(*xs, p, "m", (1, 3), ham_kernel=3, ham_sigma=1.0),
                      xs, p, rng))

    p = B.init_params(B.cwam_shapes("cw", 2, 3, 2), 5)
    fe, fd = _rand(rng, 1, 2, 3, 3, 3), _rand(rng, 1, 2, 3, 3, 3)
    res.append(_block("block.cwam", lambda: B.cwam(fe, fd, p, "cw"), [fe, fd], p, rng))

    # instance norm removes a per-channel shift: the conv bias has zero gradient, checked separately
    p = B.init_params(B.conv_module_shapes("c", 2, 3), 6)
    x = _rand(rng, 1, 2, 3, 3, 3)
    res.append(_block("block.conv_module", lambda: B.conv_module(x, p, "c"), [x], p, rng, skip=("c.conv.b",)))
    p["c.conv.b"].grad = None
    out = B.conv_module(x, p, "c")
    (out * out).sum().backward()
    bias_grad = float(np.max(np.abs(p["c.conv.b"].grad)))
    res.append({"name": "block.conv_module.bias_is_inert", "rel_err": bias_grad, "tol": 1e-12,
                "passed": bias_grad < 1e-12})
    return res


def check_model(seed: int = 0) -> List[dict]:
    cfg = NetworkConfig(1, 2, base_channels=2)
    rng = np.random.default_rng([seed, 20])
    p = generic_point(init_model(cfg, seed), rng)
    x = _rand(rng, 1, 1, 8, 8, 8)
    proj = rng.standard_normal((1, 2, 8, 8, 8))
    fn = lambda: (pdanet_forward(x, p, cfg) * proj).sum()
    err_params = directional_gradcheck(fn, [x] + [t for _, t in p.items()], n_directions=4,
                                       rng=np.random.default_rng([seed, 21]))
    err_input = gradcheck(fn, [x])[0]
    return [_record("model.directional", err_params, MODEL_TOL), _record("model.input", err_input, MODEL_TOL)]


def run_suite(target: str = "all", seed: int = 0) -> List[Dict]:
    if target not in TARGETS:
        raise ValueError(f"target must be one of {TARGETS}, got {target!r}")
    res: List[Dict] = []
    if target in ("losses", "all"):
        res += check_losses(seed)
    if target in ("blocks", "all"):
        res += check_blocks(seed)
    if target in ("model", "all"):
        res += check_model(seed)
    return res
