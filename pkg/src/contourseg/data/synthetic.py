"""Seeded phantoms with strongly imbalanced class volumes and frequencies."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from ..validation import LabelVolume

SHAPES = ("ellipsoid", "box", "shell")


class InfeasiblePackingError(ValueError):
    """The requested objects cannot be placed without overlap."""


@dataclass(frozen=True)
class ClassSpec:
    """One foreground structure: target voxel fraction, shape family, occurrence probability, mean intensity."""

    fraction: float
    shape: str
    probability: float = 1.0
    intensity: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.fraction < 1.0:
            raise ValueError(f"class fraction must lie in (0, 1), got {self.fraction}")
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape family {self.shape!r}; choose from {SHAPES}")
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"occurrence probability must lie in [0, 1], got {self.probability}")


@dataclass(frozen=True)
class DatasetSpec:
    """Seeded description of a synthetic dataset; class 0 is the implicit background."""

    seed: int = 0
    num_volumes: int = 8
    shape: Tuple[int, int, int] = (32, 32, 32)
    classes: Tuple[ClassSpec, ...] = field(default_factory=tuple)
    noise: float = 0.5
    background_intensity: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        object.__setattr__(self, "classes", tuple(
            c if isinstance(c, ClassSpec) else ClassSpec(**c) for c in self.classes))
        if len(self.shape) != 3 or min(self.shape) < 1:
            raise ValueError(f"shape must be three positive extents, got {self.shape}")
        if self.num_volumes < 1:
            raise ValueError(f"num_volumes must be >= 1, got {self.num_volumes}")
        if not self.classes:
            raise ValueError("at least one foreground class is required")
        total = sum(c.fraction for c in self.classes)
        if total >= 1.0:
            raise ValueError(f"class fractions must sum to less than 1, got {total}")
        if self.noise < 0:
            raise ValueError(f"noise must be non-negative, got {self.noise}")

    @property
    def num_classes(self) -> int:
        return len(self.classes) + 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shape"] = list(self.shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        d = dict(d)
        d["classes"] = tuple(ClassSpec(**c) for c in d.get("classes", ()))
        return cls(**d)


def imbalance_v1(seed: int = 0, num_volumes: int = 96, shape=(32, 32, 32)) -> DatasetSpec:
    """Five classes spanning a 250x volume range, with one structure present in only ~20% of volumes."""
    return DatasetSpec(
        seed=seed,
        num_volumes=num_volumes,
        shape=shape,
        classes=(
            ClassSpec(0.25, "ellipsoid", 1.0, 1.0),
            ClassSpec(0.04, "box", 1.0, 2.0),
            ClassSpec(0.004, "shell", 1.0, 3.0),
            ClassSpec(0.001, "ellipsoid", 0.2, 4.0),
        ),
        noise=0.5,
    )


PRESETS = {"imbalance-v1": imbalance_v1}


def preset(name: str, **kwargs) -> DatasetSpec:
    try:
        return PRESETS[name](**kwargs)
    except KeyError:
        raise ValueError(f"unknown dataset preset {name!r}; available: {sorted(PRESETS)}") from None


@dataclass(frozen=True)
class Sample:
    """Intensity volume ``[1, D, H, W]`` with its label volume."""

    intensity: np.ndarray
    labels: LabelVolume

    def __post_init__(self):
        arr = np.asarray(self.intensity, dtype=np.float64)
        if arr.ndim == 3:
            arr = arr[None]
        if arr.ndim != 4 or arr.shape[0] != 1 or arr.shape[1:] != self.labels.shape:
            raise ValueError(f"intensity {arr.shape} does not match labels {self.labels.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("intensity contains NaN or Inf")
        object.__setattr__(self, "intensity", arr)

    @property
    def num_classes(self) -> int:
        return self.labels.num_classes


# -- shape rasterisation ----------------------------------------------------------
def _grid(shape):
    return np.indices(shape, dtype=np.float64)


def _raster(kind: str, grid: np.ndarray, center: np.ndarray, radii: np.ndarray) -> np.ndarray:
    rel = (grid - center[:, None, None, None]) / radii[:, None, None, None]
    if kind == "box":
        return np.all(np.abs(rel) <= 1.0, axis=0)
    r2 = (rel ** 2).sum(axis=0)
    if kind == "ellipsoid":
        return r2 <= 1.0
    # shell: band of roughly one voxel inside the ellipsoid surface
    inner = ((grid - center[:, None, None, None]) / np.maximum(radii - 1.0, 1e-6)[:, None, None, None]) ** 2
    return (r2 <= 1.0) & (inner.sum(axis=0) > 1.0)


def _fit_scale(kind: str, grid, center, aspect, target: int, guess: float) -> Tuple[np.ndarray, int]:
    """Bisect the overall size so the rasterised voxel count lands near ``target``.

    Rasterises inside the bounding box of the largest candidate only.
    """
    lo, hi = 0.5 * guess, 2.5 * guess
    shape = np.array(grid.shape[1:])
    reach = hi * aspect + 1.0
    a = np.clip(np.floor(center - reach).astype(int), 0, shape)
    b = np.clip(np.ceil(center + reach).astype(int) + 1, 0, shape)
    sub = grid[:, a[0]:b[0], a[1]:b[1], a[2]:b[2]]
    best = None
    for _ in range(24):
        mid = 0.5 * (lo + hi)
        mask = _raster(kind, sub, center, mid * aspect)
        n = int(mask.sum())
        if best is None or abs(n - target) < abs(best[1] - target):
            best = (mask, n)
        if abs(n - target) <= 0.02 * target:
            break
        if n < target:
            lo = mid
        else:
            hi = mid
    full = np.zeros(grid.shape[1:], dtype=bool)
    full[a[0]:b[0], a[1]:b[1], a[2]:b[2]] = best[0]
    return full, best[1]


def _half_extent(kind: str, target: int) -> float:
    if kind == "box":
        return 0.5 * target ** (1 / 3)
    if kind == "ellipsoid":
        return (3 * target / (4 * np.pi)) ** (1 / 3)
    # thin shell of area ~ 4 pi r^2
    return np.sqrt(target / (4 * np.pi))


def _place(kind: str, target: int, occupied: np.ndarray, rng: np.random.Generator,
           grid: np.ndarray, attempts: int = 40) -> np.ndarray:
    shape = np.array(occupied.shape, dtype=np.float64)
    for _ in range(attempts):
        # unit-product aspect ratios; flattened draws leave room for later objects
        aspect = np.exp(rng.uniform(-0.5, 0.5, size=3))
        aspect /= np.prod(aspect) ** (1 / 3)
        # objects may be clipped by the volume border; the size fit compensates
        half = _half_extent(kind, target)
        margin = np.minimum(0.7 * half * aspect, (shape - 1) / 2)
        center = margin + rng.random(3) * (shape - 1 - 2 * margin)
        mask, n = _fit_scale(kind, grid, center, aspect, target, half)
        if n == 0 or abs(n - target) > 0.5 * target:
            continue
        if not np.any(mask & occupied):
            return mask
    raise InfeasiblePackingError(
        f"could not place a {kind} of ~{target} voxels without overlap after {attempts} attempts"
    )


def _layout(spec: DatasetSpec, present, rng, grid) -> np.ndarray:
    nvox = int(np.prod(spec.shape))
    labels = np.zeros(spec.shape, dtype=np.int64)
    occupied = np.zeros(spec.shape, dtype=bool)
    # place largest structures first
    order = sorted(range(len(spec.classes)), key=lambda j: -spec.classes[j].fraction)
    for j in order:
        if not present[j]:
            continue
        c = spec.classes[j]
        target = max(1, int(round(c.fraction * nvox)))
        # one-voxel margin keeps neighbouring structures from touching
        mask = _place(c.shape, target, ndimage.binary_dilation(occupied), rng, grid)
        labels[mask] = j + 1
        occupied |= mask
    return labels


def generate_one(spec: DatasetSpec, index: int, layout_attempts: int = 20) -> Sample:
    """Volume ``index`` of ``spec``; seeded from ``(spec.seed, index)`` so samples are independent.

    A layout whose later objects find no room is discarded and redrawn from
    the same stream; ``InfeasiblePackingError`` is raised after
    ``layout_attempts`` failures.
    """
    rng = np.random.default_rng([spec.seed, index])
    grid = _grid(spec.shape)
    present = [rng.random() < c.probability for c in spec.classes]
    err = None
    for _ in range(layout_attempts):
        try:
            labels = _layout(spec, present, rng, grid)
            break
        except InfeasiblePackingError as exc:
            err = exc
    else:
        raise InfeasiblePackingError(f"volume {index}: {err}")
    means = np.array([spec.background_intensity] + [c.intensity for c in spec.classes])
    intensity = means[labels] + spec.noise * rng.standard_normal(spec.shape)
    return Sample(intensity[None], LabelVolume(labels, spec.num_classes))


def generate(spec: DatasetSpec) -> List[Sample]:
    return [generate_one(spec, i) for i in range(spec.num_volumes)]


def class_fractions(samples: Sequence[Sample]) -> np.ndarray:
    """``[num_samples, num_classes]`` realised voxel fractions."""
    rows = []
    for s in samples:
        counts = np.bincount(s.labels.labels.ravel(), minlength=s.num_classes)
        rows.append(counts / s.labels.labels.size)
    return np.array(rows)


# -- patching -------------------------------------------------------------------
def patch_starts(depth: int, patch_depth: int, overlap: int) -> List[int]:
    """Axial start indices at stride ``patch_depth - overlap``; the last patch is clamped to the end."""
    if patch_depth < 1:
        raise ValueError(f"patch_depth must be >= 1, got {patch_depth}")
    if not 0 <= overlap < patch_depth:
        raise ValueError(f"overlap must lie in [0, patch_depth), got {overlap}")
    if patch_depth >= depth:
        return [0]
    stride = patch_depth - overlap
    starts = list(range(0, depth - patch_depth + 1, stride))
    if starts[-1] + patch_depth < depth:
        starts.append(depth - patch_depth)
    return starts


def slice_patches(sample: Sample, patch_depth: int, overlap: int) -> List[Sample]:
    depth = sample.labels.shape[0]
    out = []
    for s in patch_starts(depth, patch_depth, overlap):
        e = min(s + patch_depth, depth)
        out.append(Sample(sample.intensity[:, s:e], LabelVolume(sample.labels.labels[s:e], sample.num_classes)))
    return out


# -- augmentation ---------------------------------------------------------------
ROTATION_P = 0.2
FLIP_P = 0.2
MAX_ANGLE = 15.0


def flip(sample: Sample, axis: str) -> Sample:
    """Horizontal (``"h"``, last axis) or vertical (``"v"``, second-to-last axis) flip."""
    ax = {"h": -1, "v": -2}[axis]
    return Sample(np.flip(sample.intensity, ax).copy(),
                  LabelVolume(np.flip(sample.labels.labels, ax).copy(), sample.num_classes))


def rotate(sample: Sample, angle: float) -> Sample:
    """In-plane (axial) rotation: nearest neighbour for labels, linear for intensity."""
    lab = ndimage.rotate(sample.labels.labels, angle, axes=(1, 2), reshape=False, order=0,
                         mode="constant", cval=0)
    img = ndimage.rotate(sample.intensity[0], angle, axes=(1, 2), reshape=False, order=1,
                         mode="nearest")
    return Sample(img[None], LabelVolume(lab, sample.num_classes))


def augment(sample: Sample, rng: np.random.Generator) -> Sample:
    """Random rotation and flip, each applied with probability 0.2.

    Four uniforms are always drawn (two gates, the angle, the flip
    direction) so the generator advances identically whatever is applied.
    """
    u_rot, u_angle, u_flip, u_dir = rng.random(4)
    out = sample
    if u_rot < ROTATION_P:
        out = rotate(out, MAX_ANGLE * u_angle)
    if u_flip < FLIP_P:
        out = flip(out, "h" if u_dir < 0.5 else "v")
    return out
