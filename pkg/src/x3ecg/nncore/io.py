"""Tensor container format ``X3E1``.

Layout (little-endian)::

    magic   4 bytes  b"X3E1"
    count   u32      number of records
    record  name_len u32 | name utf-8 | rank u32 | dims u64 * rank | float64 data

Bytes after the last record are left for the caller (model checkpoints append
a plain-text config section there).
"""
from __future__ import annotations

import struct
from typing import BinaryIO, Mapping

import numpy as np

from ..errors import FormatError

MAGIC = b"X3E1"


def write_tensors(f: BinaryIO, tensors: Mapping[str, np.ndarray]) -> None:
    f.write(MAGIC)
    f.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        f.write(struct.pack("<I", len(raw)))
        f.write(raw)
        f.write(struct.pack("<I", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        f.write(np.ascontiguousarray(arr).tobytes())


def _read_exact(f: BinaryIO, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError("truncated tensor container")
    return buf


def read_tensors(f: BinaryIO) -> dict[str, np.ndarray]:
    if _read_exact(f, 4) != MAGIC:
        raise FormatError("not an X3E1 tensor container")
    (count,) = struct.unpack("<I", _read_exact(f, 4))
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", _read_exact(f, 4))
        name = _read_exact(f, name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", _read_exact(f, 4))
        dims = struct.unpack(f"<{rank}Q", _read_exact(f, 8 * rank))
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = np.frombuffer(_read_exact(f, 8 * n), dtype="<f8").astype(np.float64)
        out[name] = data.reshape(dims)
    return out


def save_tensors(path, tensors: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        write_tensors(f, tensors)


def load_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        return read_tensors(f)
