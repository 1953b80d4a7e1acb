"""CSV1 volume files and JSON dataset manifests.

CSV1 layout (little-endian)::

    magic     b"CSV1"
    u32 x 3   D, H, W
    u32       num_classes
    u8        intensity dtype code (1 = float32, 2 = float64)
    u8        label dtype code     (1 = uint8,   2 = int32)
    ...       intensity block, C order
    ...       label block, C order
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np

from ..validation import LabelVolume
from .synthetic import DatasetSpec, Sample

MAGIC = b"CSV1"
_INTENSITY_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_LABEL_CODES = {1: np.dtype("u1"), 2: np.dtype("<i4")}
SPLITS = ("train", "val", "test")
MANIFEST_FORMAT = "contourseg-manifest"


class DataFormatError(ValueError):
    pass


def write_volume(path, sample: Sample) -> None:
    D, H, W = sample.labels.shape
    M = sample.num_classes
    lcode = 1 if M <= 256 else 2
    header = MAGIC + struct.pack("<4I2B", D, H, W, M, 2, lcode)
    body = (np.ascontiguousarray(sample.intensity[0], dtype=_INTENSITY_CODES[2]).tobytes()
            + np.ascontiguousarray(sample.labels.labels, dtype=_LABEL_CODES[lcode]).tobytes())
    Path(path).write_bytes(header + body)


def read_volume(path) -> Sample:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise DataFormatError(f"cannot read volume {path}: {exc.strerror}") from None
    head = len(MAGIC) + struct.calcsize("<4I2B")
    if len(buf) < head or buf[:len(MAGIC)] != MAGIC:
        raise DataFormatError(f"{path} is not a CSV1 volume")
    D, H, W, M, icode, lcode = struct.unpack("<4I2B", buf[len(MAGIC):head])
    if icode not in _INTENSITY_CODES or lcode not in _LABEL_CODES:
        raise DataFormatError(f"{path}: unknown dtype codes ({icode}, {lcode})")
    idt, ldt = _INTENSITY_CODES[icode], _LABEL_CODES[lcode]
    n = D * H * W
    if len(buf) != head + n * (idt.itemsize + ldt.itemsize):
        raise DataFormatError(f"{path}: size does not match header {D}x{H}x{W}")
    img = np.frombuffer(buf, idt, n, head).reshape(D, H, W).astype(np.float64)
    lab = np.frombuffer(buf, ldt, n, head + n * idt.itemsize).reshape(D, H, W).astype(np.int64)
    try:
        return Sample(img[None], LabelVolume(lab, M))
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from None


@dataclass
class Manifest:
    """Dataset index: file lists per split, relative to ``root``."""

    root: Path
    splits: Dict[str, List[str]]
    num_classes: int
    shape: tuple
    spec: dict

    def files(self, split: str) -> List[Path]:
        if split not in self.splits:
            raise DataFormatError(f"manifest has no split {split!r}; available: {sorted(self.splits)}")
        return [self.root / f for f in self.splits[split]]

    def load(self, split: str) -> List[Sample]:
        out = []
        for f in self.files(split):
            s = read_volume(f)
            if s.num_classes != self.num_classes:
                raise DataFormatError(f"{f}: {s.num_classes} classes, manifest says {self.num_classes}")
            out.append(s)
        return out


def write_dataset(out_dir, samples: Sequence[Sample], spec: DatasetSpec, counts: Dict[str, int]) -> Path:
    """Write volumes and ``manifest.json``; samples are assigned to splits in order."""
    out_dir = Path(out_dir)
    if sum(counts.values()) != len(samples):
        raise ValueError(f"split counts {counts} do not add up to {len(samples)} samples")
    out_dir.mkdir(parents=True, exist_ok=True)
    splits, i = {}, 0
    for name in SPLITS:
        splits[name] = []
        for _ in range(counts.get(name, 0)):
            fname = f"{name}_{i:04d}.csv1"
            write_volume(out_dir / fname, samples[i])
            splits[name].append(fname)
            i += 1
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": 1,
        "num_classes": spec.num_classes,
        "shape": list(spec.shape),
        "spec": spec.to_dict(),
        "splits": splits,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_manifest(path) -> Manifest:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except OSError as exc:
        raise DataFormatError(f"cannot read manifest {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"manifest {path} is not valid JSON: {exc.msg}") from None
    if d.get("format") != MANIFEST_FORMAT:
        raise DataFormatError(f"{path} is not a dataset manifest")
    for key in ("splits", "num_classes", "shape"):
        if key not in d:
            raise DataFormatError(f"manifest {path} lacks {key!r}")
    return Manifest(path.parent, {k: list(v) for k, v in d["splits"].items()}, int(d["num_classes"]),
                    tuple(d["shape"]), d.get("spec", {}))
