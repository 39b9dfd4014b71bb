"""VRT1 binary tensor files.

Layout: magic ``VRT1``, u32 LE version, u8 dtype code (0 = f32, 1 = f64),
u8 rank, rank x u64 LE dims, then raw little-endian data in C order.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

MAGIC = b"VRT1"
VERSION = 1
DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class FormatError(ValueError):
    pass


def encode(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    dt = arr.dtype.newbyteorder("<")
    if dt not in DTYPE_CODES:
        raise FormatError(f"VRT1 stores float32/float64 only, got {arr.dtype}")
    header = MAGIC + struct.pack("<IBB", VERSION, DTYPE_CODES[dt], arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=dt).tobytes()


def read_from(fh: BinaryIO, source: str = "<stream>") -> np.ndarray:
    magic = fh.read(4)
    if magic != MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    fixed = fh.read(6)
    if len(fixed) != 6:
        raise FormatError(f"{source}: truncated header")
    version, code, rank = struct.unpack("<IBB", fixed)
    if version != VERSION:
        raise FormatError(f"{source}: unsupported VRT1 version {version}")
    if code not in CODE_DTYPES:
        raise FormatError(f"{source}: unknown dtype code {code}")
    raw_dims = fh.read(8 * rank)
    if len(raw_dims) != 8 * rank:
        raise FormatError(f"{source}: truncated shape")
    shape = struct.unpack(f"<{rank}Q", raw_dims)
    dt = CODE_DTYPES[code]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
    payload = fh.read(nbytes)
    if len(payload) != nbytes:
        raise FormatError(f"{source}: expected {nbytes} data bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))


def decode(buf: bytes, source: str = "<bytes>") -> np.ndarray:
    import io

    fh = io.BytesIO(buf)
    arr = read_from(fh, source)
    if fh.read(1):
        raise FormatError(f"{source}: trailing bytes after tensor")
    return arr


def save(path: str | Path, arr: np.ndarray) -> None:
    Path(path).write_bytes(encode(arr))


def load(path: str | Path) -> np.ndarray:
    path = Path(path)
    return decode(path.read_bytes(), str(path))
