"""Versioned binary container for model parameters.

Layout (all integers little-endian)::

    magic  b"CSEGCKPT"
    u32    format version
    u32    length of the UTF-8 JSON header, then the header
    u32    number of tensors
    per tensor:
        u16 name length, UTF-8 name
        u8  ndim, then ndim x u32 extents
        raw float64 little-endian values in C order

The header echoes the network config plus any caller metadata.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from ..tensor import Tensor
from .config import ModelParams, NetworkConfig

MAGIC = b"CSEGCKPT"
VERSION = 1
_F64 = np.dtype("<f8")


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: ModelParams, cfg: NetworkConfig, meta: Optional[dict] = None) -> None:
    header = json.dumps({"network": cfg.to_dict(), "meta": meta or {}}, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<II", VERSION, len(header)), header, struct.pack("<I", len(params))]
    for name, t in params.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape))
        chunks.append(np.ascontiguousarray(t.data, dtype=_F64).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> Tuple[ModelParams, NetworkConfig, dict]:
    buf = Path(path).read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"truncated checkpoint {path}")
        out = buf[pos:pos + n]
        pos += n
        return out

    if take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    version, hlen = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(take(hlen).decode("utf-8"))
    cfg = NetworkConfig.from_dict(header["network"])
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        n = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(take(8 * n), dtype=_F64).reshape(shape)
        tensors[name] = Tensor(data.astype(np.float64), requires_grad=True)
    if pos != len(buf):
        raise CheckpointError(f"trailing bytes in checkpoint {path}")
    return ModelParams(tensors), cfg, header.get("meta", {})
