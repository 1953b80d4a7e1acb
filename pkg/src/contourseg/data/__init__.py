"""Synthetic imbalanced volumes, patching, augmentation and file formats."""

from .io import DataFormatError, Manifest, load_manifest, read_volume, write_dataset, write_volume
from .synthetic import (
    PRESETS,
    ClassSpec,
    DatasetSpec,
    InfeasiblePackingError,
    Sample,
    augment,
    class_fractions,
    flip,
    generate,
    generate_one,
    imbalance_v1,
    patch_starts,
    preset,
    rotate,
    slice_patches,
)

__all__ = [
    "PRESETS", "ClassSpec", "DataFormatError", "DatasetSpec", "InfeasiblePackingError", "Manifest",
    "Sample", "augment", "class_fractions", "flip", "generate", "generate_one", "imbalance_v1",
    "load_manifest", "patch_starts", "preset", "read_volume", "rotate", "slice_patches",
    "write_dataset", "write_volume",
]
