"""Overlap and surface-distance metrics: DSC, HD95 and ASSD.

Distances are Euclidean in voxel units (isotropic unit spacing). Both surface
metrics pool the directed nearest-surface distances from prediction to
ground truth and from ground truth to prediction, so they are symmetric by
construction. They are undefined (``nan``) when either surface is empty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
from scipy.spatial import cKDTree

from .validation import LabelVolume, check_binary, check_same_shape

_NEIGHBOURS_6 = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))


def dsc(pred: LabelVolume, gt: LabelVolume, cls: int) -> float:
    """Dice similarity of class ``cls``; 1.0 when both masks are empty."""
    check_same_shape(pred.labels, gt.labels, "prediction and ground truth")
    return dsc_masks(pred.labels == cls, gt.labels == cls)


def dsc_masks(p, g) -> float:
    p = check_binary(p, "prediction")
    g = check_binary(g, "ground truth")
    check_same_shape(p, g, "masks")
    sp, sg = int(p.sum()), int(g.sum())
    if sp == 0 and sg == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / (sp + sg)


def surface_voxels(mask) -> np.ndarray:
    """``(K, 3)`` coordinates of foreground voxels with a 6-connected background neighbour.

    Out-of-volume neighbours count as background.
    """
    m = check_binary(mask)
    padded = np.pad(m, 1, constant_values=False)
    interior = np.ones_like(m)
    D, H, W = m.shape
    for dz, dy, dx in _NEIGHBOURS_6:
        interior &= padded[1 + dz:1 + dz + D, 1 + dy:1 + dy + H, 1 + dx:1 + dx + W]
    return np.argwhere(m & ~interior)


def directed_surface_distances(pred_mask, gt_mask) -> Optional[np.ndarray]:
    """Sorted pooled nearest-surface distances in both directions, or None if a surface is empty.

    Sorting makes every downstream reduction independent of argument order.
    """
    sp = surface_voxels(pred_mask)
    sg = surface_voxels(gt_mask)
    if len(sp) == 0 or len(sg) == 0:
        return None
    d_pg, _ = cKDTree(sg).query(sp, k=1)
    d_gp, _ = cKDTree(sp).query(sg, k=1)
    return np.sort(np.concatenate([d_pg, d_gp]))


def hd95(pred_mask, gt_mask) -> float:
    """95th percentile (inclusive linear interpolation) of pooled surface distances."""
    check_same_shape(np.asarray(pred_mask), np.asarray(gt_mask), "masks")
    d = directed_surface_distances(pred_mask, gt_mask)
    if d is None:
        return math.nan
    return float(np.percentile(d, 95, method="linear"))


def assd(pred_mask, gt_mask) -> float:
    """Mean of pooled surface distances."""
    check_same_shape(np.asarray(pred_mask), np.asarray(gt_mask), "masks")
    d = directed_surface_distances(pred_mask, gt_mask)
    if d is None:
        return math.nan
    return float(d.mean())


@dataclass
class ClassMetrics:
    dsc: float
    hd95: float
    assd: float


@dataclass
class MetricReport:
    """Per-class metrics plus means over the classes where each metric is defined."""

    per_class: Dict[int, ClassMetrics] = field(default_factory=dict)

    @property
    def mean_dsc(self) -> float:
        return _nanmean([m.dsc for m in self.per_class.values()])

    @property
    def mean_hd95(self) -> float:
        return _nanmean([m.hd95 for m in self.per_class.values()])

    @property
    def mean_assd(self) -> float:
        return _nanmean([m.assd for m in self.per_class.values()])

    def to_dict(self) -> dict:
        return {
            "per_class": {str(c): {"dsc": m.dsc, "hd95": _json_num(m.hd95), "assd": _json_num(m.assd)}
                          for c, m in sorted(self.per_class.items())},
            "mean": {"dsc": _json_num(self.mean_dsc), "hd95": _json_num(self.mean_hd95),
                     "assd": _json_num(self.mean_assd)},
        }


def evaluate_labels(pred: LabelVolume, gt: LabelVolume, classes=None) -> MetricReport:
    """Metrics for every foreground class (or the given ``classes``)."""
    check_same_shape(pred.labels, gt.labels, "prediction and ground truth")
    classes = range(1, gt.num_classes) if classes is None else classes
    report = MetricReport()
    for c in classes:
        p, g = pred.labels == c, gt.labels == c
        report.per_class[int(c)] = ClassMetrics(dsc_masks(p, g), hd95(p, g), assd(p, g))
    return report


def _nanmean(vals) -> float:
    arr = np.array([v for v in vals if not math.isnan(v)], dtype=np.float64)
    return float(arr.mean()) if arr.size else math.nan


def _json_num(v: float):
    return None if math.isnan(v) else v
