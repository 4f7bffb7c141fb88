"""Versioned binary checkpoint: a flat name -> tensor map with a dims header.

Layout (all integers little-endian, values float64 row-major):

    magic   4 bytes  b"SACP"
    version u32      currently 1
    count   u32      number of entries
    entry   repeated `count` times, sorted by name:
        name_len u32
        name     utf-8 bytes
        ndim     u32
        dims     ndim * u64
        values   prod(dims) * f64

The sorted order makes the byte stream a pure function of the tensor map.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"SACP"
VERSION = 1


def save_checkpoint(path: str | Path, params: dict[str, np.ndarray]) -> None:
    """Write a parameter map to `path` in the container format above."""
    chunks = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name in sorted(params):
        value = np.ascontiguousarray(params[name], dtype=np.float64)
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", value.ndim))
        chunks.append(struct.pack(f"<{value.ndim}Q", *value.shape))
        chunks.append(value.tobytes())
    try:
        Path(path).write_bytes(b"".join(chunks))
    except OSError as exc:
        raise DataError(f"cannot write checkpoint {path}: {exc}") from exc


class _Reader:
    def __init__(self, blob: bytes, path: Path) -> None:
        self.blob = blob
        self.offset = 0
        self.path = path

    def take(self, count: int) -> bytes:
        if self.offset + count > len(self.blob):
            raise DataError(f"truncated checkpoint {self.path}")
        out = self.blob[self.offset : self.offset + count]
        self.offset += count
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    """Read a checkpoint written by `save_checkpoint`."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    reader = _Reader(blob, path)
    if reader.take(4) != MAGIC:
        raise DataError(f"{path} is not a checkpoint (bad magic)")
    version = reader.u32()
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    params: dict[str, np.ndarray] = {}
    for _ in range(reader.u32()):
        name = reader.take(reader.u32()).decode("utf-8")
        ndim = reader.u32()
        dims = struct.unpack(f"<{ndim}Q", reader.take(8 * ndim))
        count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        values = np.frombuffer(reader.take(8 * count), dtype="<f8").copy()
        params[name] = values.reshape(dims)
    if reader.offset != len(blob):
        raise DataError(f"{path}: trailing bytes after last entry")
    return params
