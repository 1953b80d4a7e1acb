"""Binary 3-D erosion and per-class contour maps.

The contour of a class mask ``G`` is ``C = G - erode(G)``: the voxels peeled
away by erosion. ``C`` doubles as the binary weight map that up-weights
boundary voxels in the contour-weighted losses.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .validation import LabelVolume, check_binary


@dataclass(frozen=True)
class StructuringElement:
    """Solid ``k x k x k`` cube anchored at ``anchor``.

    Eroding with this element keeps voxel ``v`` iff every voxel
    ``v + o - anchor`` for ``o`` in ``[0, k)^3`` is foreground. The default
    anchor ``(0, 0, 0)`` makes even sizes well defined.
    """

    k: int = 2
    anchor: Tuple[int, int, int] = (0, 0, 0)

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"structuring element size must be a positive integer, got {self.k}")
        anchor = tuple(int(a) for a in self.anchor)
        if len(anchor) != 3 or any(not 0 <= a < self.k for a in anchor):
            raise ValueError(f"anchor {self.anchor} must have three components in [0, {self.k})")
        object.__setattr__(self, "anchor", anchor)

    @classmethod
    def centered(cls, k: int) -> "StructuringElement":
        c = (k - 1) // 2
        return cls(k, (c, c, c))


@dataclass(frozen=True)
class ContourMaps:
    """Per-class erosion and contour masks shaped ``(M, D, H, W)``.

    Batched maps carry a leading sample axis, ``(N, M, D, H, W)``. The
    background row is always empty.
    """

    eroded: np.ndarray
    contour: np.ndarray

    @property
    def weight_map(self) -> np.ndarray:
        return self.contour

    @property
    def num_classes(self) -> int:
        return self.contour.shape[-4]

    @property
    def shape(self):
        return self.contour.shape[-3:]


def erode(mask, se: StructuringElement = StructuringElement(), iterations: int = 1) -> np.ndarray:
    """Binary erosion with outside-of-volume treated as background."""
    m = check_binary(mask, "mask")
    if int(iterations) != iterations or iterations < 1:
        raise ValueError(f"iterations must be a positive integer, got {iterations}")
    k = se.k
    a = se.anchor
    D, H, W = m.shape
    for _ in range(int(iterations)):
        padded = np.zeros((D + k - 1, H + k - 1, W + k - 1), dtype=bool)
        padded[a[0]:a[0] + D, a[1]:a[1] + H, a[2]:a[2] + W] = m
        out = np.ones_like(m)
        for i in range(k):
            for j in range(k):
                for l in range(k):
                    out &= padded[i:i + D, j:j + H, l:l + W]
        m = out
    return m


def extract_contours(gt: LabelVolume, se: StructuringElement = StructuringElement(),
                     iterations: int = 1) -> ContourMaps:
    """Contour and erosion masks for every foreground class of ``gt``."""
    M = gt.num_classes
    eroded = np.zeros((M,) + gt.shape, dtype=bool)
    contour = np.zeros_like(eroded)
    for j in range(1, M):
        g = gt.labels == j
        if not g.any():
            continue
        e = erode(g, se, iterations)
        eroded[j] = e
        contour[j] = g & ~e
    return ContourMaps(eroded=eroded, contour=contour)


def extract_contours_batch(labels: np.ndarray, num_classes: int, se: StructuringElement = StructuringElement(),
                           iterations: int = 1) -> ContourMaps:
    """Stack :func:`extract_contours` over a ``(N, D, H, W)`` batch into ``(N, M, D, H, W)`` masks."""
    maps = [extract_contours(LabelVolume(lab, num_classes), se, iterations) for lab in labels]
    return ContourMaps(eroded=np.stack([m.eroded for m in maps]),
                       contour=np.stack([m.contour for m in maps]))


def contour_fraction(maps: ContourMaps, gt: LabelVolume) -> np.ndarray:
    """Per-class ``|C_j| / |G_j|`` (0 for absent classes)."""
    out = np.zeros(gt.num_classes)
    for j in range(1, gt.num_classes):
        n = int((gt.labels == j).sum())
        if n:
            out[j] = maps.contour[j].sum() / n
    return out
