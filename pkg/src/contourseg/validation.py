"""Input validation helpers shared by the public API."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LabelVolume:
    """Integer class-ID voxel grid.

    ``labels`` is a ``(D, H, W)`` array of class indices in ``[0, num_classes)``;
    class 0 is background.
    """

    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        labels = check_labels(self.labels, self.num_classes, ndim=3)
        object.__setattr__(self, "labels", labels)

    @property
    def shape(self):
        return self.labels.shape

    def one_hot(self) -> np.ndarray:
        """``(num_classes, D, H, W)`` float array with exactly one 1 per voxel."""
        return one_hot(self.labels, self.num_classes)

    def mask(self, cls: int) -> np.ndarray:
        return self.labels == cls


def check_labels(labels, num_classes: int, ndim=None) -> np.ndarray:
    """Return ``labels`` as an int64 array after range and shape checks."""
    if int(num_classes) != num_classes or num_classes < 1:
        raise ValueError(f"num_classes must be a positive integer, got {num_classes}")
    arr = np.asarray(labels)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"labels must be {ndim}-D, got shape {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ValueError("labels must be integer class IDs")
    arr = arr.astype(np.int64, copy=False)
    if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
        raise ValueError(
            f"label values must lie in [0, {num_classes}), found range [{arr.min()}, {arr.max()}]"
        )
    return arr


def check_binary(mask, name: str = "mask", ndim: int = 3) -> np.ndarray:
    """Return ``mask`` as a bool array; reject anything other than {0, 1} (or bools)."""
    arr = np.asarray(mask)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if arr.dtype != bool:
        if arr.size and not np.all((arr == 0) | (arr == 1)):
            raise ValueError(f"{name} must be binary (values 0/1)")
        arr = arr.astype(bool)
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "inputs") -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what} must have the same shape, got {a.shape} and {b.shape}")


def check_volume_batch(X, ndim: int = 5) -> np.ndarray:
    """Coerce intensity input to ``[N, C, D, H, W]`` float64.

    A single ``(D, H, W)`` volume or a ``(N, D, H, W)`` stack gets the missing
    leading axes added.
    """
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None, None]
    elif arr.ndim == 4:
        arr = arr[:, None]
    if arr.ndim != ndim:
        raise ValueError(f"expected volumes shaped [N, C, D, H, W], got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("volume contains NaN or Inf")
    return arr


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """One-hot over a new leading class axis: ``(..., D, H, W) -> (M, ..., D, H, W)``."""
    labels = np.asarray(labels)
    return (labels[None] == np.arange(num_classes).reshape((-1,) + (1,) * labels.ndim)).astype(np.float64)
