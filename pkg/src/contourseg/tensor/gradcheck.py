"""Central finite-difference checks for analytic gradients."""

from __future__ import annotations

from typing import Callable, Dict, Optional, Sequence

import numpy as np

from .core import Tensor, no_grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-wise relative difference ``||a - b|| / max(||a||, ||b||)``.

    Returns 0.0 when both arrays are identically zero.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def numerical_gradient(fn: Callable[[], Tensor], x: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``fn()`` with respect to ``x.data``, in place."""
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn().item()
            flat[i] = orig - h
            fm = fn().item()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def analytic_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor]) -> list:
    for t in inputs:
        t.grad = None
    out = fn()
    out.backward()
    return [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]


def gradcheck(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
) -> Dict[int, float]:
    """Compare analytic and numerical gradients for every input.

    Returns a mapping from input position to its relative error.
    """
    analytic = analytic_gradients(fn, inputs)
    return {i: relative_error(a, numerical_gradient(fn, t, h)) for i, (t, a) in enumerate(zip(inputs, analytic))}


def directional_gradcheck(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
    n_directions: int = 3,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Check ``grad . v`` against a central difference along random unit directions ``v``.

    Scales to models with many parameters, where per-coordinate differences are
    too expensive. Returns the worst relative error over the directions.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    analytic = analytic_gradients(fn, inputs)
    worst = 0.0
    for _ in range(n_directions):
        dirs = [rng.standard_normal(t.shape) for t in inputs]
        norm = np.sqrt(sum(float((d * d).sum()) for d in dirs))
        dirs = [d / norm for d in dirs]
        predicted = sum(float((a * d).sum()) for a, d in zip(analytic, dirs))
        originals = [t.data.copy() for t in inputs]
        with no_grad():
            for t, d, o in zip(inputs, dirs, originals):
                t.data[...] = o + h * d
            fp = fn().item()
            for t, d, o in zip(inputs, dirs, originals):
                t.data[...] = o - h * d
            fm = fn().item()
            for t, o in zip(inputs, originals):
                t.data[...] = o
        numeric = (fp - fm) / (2.0 * h)
        worst = max(worst, relative_error(np.array([predicted]), np.array([numeric])))
    return worst
