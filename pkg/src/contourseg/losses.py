"""Segmentation losses built on the autodiff tensor.

Every loss takes raw logits shaped ``[N, M, D, H, W]``, integer labels shaped
``[N, D, H, W]`` (a single :class:`LabelVolume` is accepted too) and, for the
contour-aware variants, :class:`ContourMaps` computed from those labels.

Dice-style terms skip the background class and give a class whose ground
truth is empty inside the region being scored a loss of exactly 0.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Callable, Dict, NamedTuple, Optional

import numpy as np

from . import tensor as T
from .morphology import ContourMaps, StructuringElement, extract_contours_batch
from .tensor import Tensor
from .validation import LabelVolume, check_labels

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossConfig:
    """Loss hyperparameters.

    ``lam`` scales the contour weight in the weighted cross-entropy, ``alpha``
    is the separable-Dice share of the compound loss and ``beta`` the contour
    share inside the separable Dice. ``k``/``iterations`` configure the erosion
    that produces the contour maps. ``reduction`` controls whether voxel sums
    in the cross-entropy terms are divided by the voxel count (``"mean"``) or
    left as plain sums (``"sum"``).
    """

    lam: float = 2.0
    alpha: float = 0.5
    beta: float = 0.5
    epsilon: float = 1e-6
    k: int = 2
    iterations: int = 1
    reduction: str = "mean"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.reduction not in ("mean", "sum"):
            raise ValueError(f"reduction must be 'mean' or 'sum', got {self.reduction!r}")
        if self.k < 1 or self.iterations < 1:
            raise ValueError("erosion k and iterations must be >= 1")

    @property
    def structuring_element(self) -> StructuringElement:
        return StructuringElement(self.k)

    def to_dict(self) -> dict:
        return asdict(self)


def _as_batch_labels(gt, num_classes: int) -> np.ndarray:
    if isinstance(gt, LabelVolume):
        if gt.num_classes != num_classes:
            raise ValueError(f"label volume has {gt.num_classes} classes, logits have {num_classes}")
        return gt.labels[None]
    labels = np.asarray(gt)
    if labels.ndim == 3:
        labels = labels[None]
    return check_labels(labels, num_classes, ndim=4)


def _prepare(logits: Tensor, gt):
    logits = T.as_tensor(logits)
    if logits.ndim != 5:
        raise ValueError(f"logits must be [N, M, D, H, W], got shape {logits.shape}")
    M = logits.shape[1]
    labels = _as_batch_labels(gt, M)
    if labels.shape != (logits.shape[0],) + logits.shape[2:]:
        raise ValueError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    onehot = (labels[:, None] == np.arange(M).reshape(1, M, 1, 1, 1)).astype(np.float64)
    return logits, labels, onehot


def _check_maps(maps: ContourMaps, onehot: np.ndarray) -> ContourMaps:
    if maps.contour.ndim == 4:
        maps = ContourMaps(eroded=maps.eroded[None], contour=maps.contour[None])
    if maps.contour.shape != onehot.shape or maps.eroded.shape != onehot.shape:
        raise ValueError(f"contour maps shape {maps.contour.shape} does not match one-hot labels {onehot.shape}")
    g = onehot.astype(bool)
    if (maps.contour & ~g).any() or (maps.eroded & ~g).any() or (maps.contour & maps.eroded).any():
        raise ValueError("contour maps are inconsistent with the ground truth labels")
    return maps


def contour_maps_for(labels, num_classes: int, cfg: LossConfig) -> ContourMaps:
    """Batched contour maps for ``labels`` using the erosion settings in ``cfg``."""
    labels = np.asarray(labels)
    if labels.ndim == 3:
        labels = labels[None]
    return extract_contours_batch(labels, num_classes, cfg.structuring_element, cfg.iterations)


# -- cross-entropy family -----------------------------------------------------
def _weighted_ce(logits: Tensor, coef: np.ndarray, cfg: LossConfig) -> Tensor:
    M = logits.shape[1]
    log_p = T.clamp_min(T.log_softmax(logits, axis=1), float(np.log(cfg.epsilon)))
    total = (log_p * coef).sum()
    scale = 1.0 / M
    if cfg.reduction == "mean":
        scale /= logits.shape[0] * int(np.prod(logits.shape[2:]))
    return total * (-scale)


def cross_entropy(logits, gt, cfg: LossConfig = LossConfig()) -> Tensor:
    """Multi-class cross-entropy averaged over classes."""
    logits, _, onehot = _prepare(logits, gt)
    return _weighted_ce(logits, onehot, cfg)


def contour_weighted_ce(logits, gt, maps: ContourMaps, cfg: LossConfig = LossConfig()) -> Tensor:
    """Cross-entropy with voxel weight ``lam * w_c + 1`` on each class's own contour."""
    logits, _, onehot = _prepare(logits, gt)
    maps = _check_maps(maps, onehot)
    weight = cfg.lam * maps.weight_map.astype(np.float64) + 1.0
    return _weighted_ce(logits, onehot * weight, cfg)


# -- Dice family ----------------------------------------------------------------
def _class_dice_terms(p: Tensor, g: np.ndarray, region: Optional[np.ndarray], eps: float):
    """Per-foreground-class Dice losses restricted to ``region``.

    Returns ``(terms, present)`` where ``terms`` is a Tensor over the present
    foreground classes and ``present`` their class indices.
    """
    if region is not None:
        p = p * region
        g = g * region
    axes = (0, 2, 3, 4)
    g_sq = (g * g).sum(axis=axes)
    present = np.flatnonzero(g_sq[1:] > 0) + 1
    if present.size == 0:
        return None, present
    inter = (p * g).sum(axis=axes)
    p_sq = (p * p).sum(axis=axes)
    ratio = inter * 2.0 / (p_sq + (g_sq + eps))
    return 1.0 - ratio[present], present


def _mean_fg_dice(p: Tensor, g: np.ndarray, region, eps: float) -> Tensor:
    M = p.shape[1]
    if M < 2:
        raise ValueError("Dice losses need at least one foreground class")
    terms, _ = _class_dice_terms(p, g, region, eps)
    if terms is None:
        return Tensor(0.0)
    return terms.sum() * (1.0 / (M - 1))


def dice_loss(logits, gt, cfg: LossConfig = LossConfig()) -> Tensor:
    """Soft Dice averaged over foreground classes."""
    logits, _, onehot = _prepare(logits, gt)
    p = T.softmax(logits, axis=1)
    return _mean_fg_dice(p, onehot, None, cfg.epsilon)


def contour_dice_losses(logits, gt, maps: ContourMaps, cfg: LossConfig = LossConfig()):
    """The contour and non-contour Dice components ``(L_c, L_noc)``.

    The non-contour region of class ``j`` is its eroded mask ``E_j``; the
    contour region is the rest of the grid, so the two partition all voxels
    and the region ground truths are ``C_j`` and ``E_j`` respectively.
    """
    logits, _, onehot = _prepare(logits, gt)
    maps = _check_maps(maps, onehot)
    p = T.softmax(logits, axis=1)
    inner = maps.eroded.astype(np.float64)
    l_c = _mean_fg_dice(p, onehot, 1.0 - inner, cfg.epsilon)
    l_noc = _mean_fg_dice(p, onehot, inner, cfg.epsilon)
    return l_c, l_noc


def separable_dice(logits, gt, maps: ContourMaps, cfg: LossConfig = LossConfig()) -> Tensor:
    """``beta * L_c + (1 - beta) * L_noc``."""
    l_c, l_noc = contour_dice_losses(logits, gt, maps, cfg)
    if cfg.beta == 1.0 and not np.asarray(maps.contour).any():
        logger.warning("separable_dice: every contour region is empty; L_c is 0 by the empty-class rule")
    return l_c * cfg.beta + l_noc * (1.0 - cfg.beta)


def compound_cwcd(logits, gt, maps: ContourMaps, cfg: LossConfig = LossConfig()) -> Tensor:
    """``alpha * SDL + (1 - alpha) * CWCE``."""
    sdl = separable_dice(logits, gt, maps, cfg)
    cwce = contour_weighted_ce(logits, gt, maps, cfg)
    return sdl * cfg.alpha + cwce * (1.0 - cfg.alpha)


def generalized_dice(logits, gt, cfg: LossConfig = LossConfig()) -> Tensor:
    """Per-class Dice losses averaged with weights ``1 / |G_j|^2``.

    Classes with empty ground truth get weight 0.
    """
    logits, _, onehot = _prepare(logits, gt)
    if logits.shape[1] < 2:
        raise ValueError("Dice losses need at least one foreground class")
    p = T.softmax(logits, axis=1)
    terms, present = _class_dice_terms(p, onehot, None, cfg.epsilon)
    if terms is None:
        return Tensor(0.0)
    volume = onehot.sum(axis=(0, 2, 3, 4))[present]
    w = 1.0 / volume ** 2
    return (terms * (w / w.sum())).sum()


def gdl_class_weights(labels, num_classes: int) -> np.ndarray:
    """The ``1 / |G_j|^2`` weights used by :func:`generalized_dice` (0 for absent or background)."""
    labels = np.asarray(labels)
    vol = np.array([(labels == j).sum() for j in range(num_classes)], dtype=np.float64)
    w = np.zeros(num_classes)
    nz = vol > 0
    w[nz] = 1.0 / vol[nz] ** 2
    w[0] = 0.0
    return w


def combo_loss(logits, gt, cfg: LossConfig = LossConfig()) -> Tensor:
    """Equal mix of Dice and cross-entropy."""
    return dice_loss(logits, gt, cfg) * 0.5 + cross_entropy(logits, gt, cfg) * 0.5


LossFn = Callable[[Tensor, np.ndarray, Optional[ContourMaps], LossConfig], Tensor]

LOSSES: Dict[str, LossFn] = {
    "ce": lambda z, y, m, c: cross_entropy(z, y, c),
    "cwce": contour_weighted_ce,
    "dice": lambda z, y, m, c: dice_loss(z, y, c),
    "sdl": separable_dice,
    "cwcd": compound_cwcd,
    "gdl": lambda z, y, m, c: generalized_dice(z, y, c),
    "combo": lambda z, y, m, c: combo_loss(z, y, c),
}

NEEDS_CONTOURS = frozenset({"cwce", "sdl", "cwcd"})


def get_loss(name: str) -> LossFn:
    try:
        return LOSSES[name]
    except KeyError:
        raise ValueError(f"unknown loss {name!r}; choose from {sorted(LOSSES)}") from None


# -- superadditivity of the harmonic-mean form --------------------------------
class SuperadditivityResult(NamedTuple):
    lhs: float
    rhs: float
    holds: bool


def harmonic_form(x, y):
    """``2xy / (x + y)`` with ``f(0, 0) = 0``; works elementwise on arrays."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    s = x + y
    safe = np.where(s > 0, s, 1.0)
    return np.where(s > 0, 2.0 * x * y / safe, 0.0)


def check_superadditivity(x1, y1, x2, y2, tol: float = 1e-12) -> SuperadditivityResult:
    """Evaluate ``f(x1+x2, y1+y2) >= f(x1, y1) + f(x2, y2)`` for non-negative inputs."""
    vals = np.array([x1, y1, x2, y2], dtype=np.float64)
    if np.any(vals < 0) or not np.all(np.isfinite(vals)):
        raise ValueError(f"inputs must be finite and non-negative, got {vals.tolist()}")
    lhs = float(harmonic_form(x1 + x2, y1 + y2))
    rhs = float(harmonic_form(x1, y1) + harmonic_form(x2, y2))
    return SuperadditivityResult(lhs, rhs, lhs >= rhs - tol)


def superadditivity_gaps(x1, y1, x2, y2) -> np.ndarray:
    """Vectorised ``lhs - rhs`` over arrays of quadruples."""
    arrs = [np.asarray(a, dtype=np.float64) for a in (x1, y1, x2, y2)]
    if any(np.any(a < 0) for a in arrs):
        raise ValueError("inputs must be non-negative")
    x1, y1, x2, y2 = arrs
    return harmonic_form(x1 + x2, y1 + y2) - (harmonic_form(x1, y1) + harmonic_form(x2, y2))
