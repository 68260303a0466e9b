"""MGT1 tensor file format.

Layout: 4-byte magic ``MGT1``, one dtype tag byte (1 = float32), one ndim
byte, ndim little-endian uint64 dims, then the raw little-endian float32
payload in row-major order. Used for dataset images, masks, embeddings and
checkpoint parameters.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"MGT1"
DTYPE_F32 = 1


class MgtFormatError(ValueError):
    pass


def to_bytes(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    header = MAGIC + struct.pack("<BB", DTYPE_F32, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
    return header + dims + arr.tobytes()


def from_bytes(buf: bytes) -> np.ndarray:
    if buf[:4] != MAGIC:
        raise MgtFormatError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    tag, ndim = struct.unpack_from("<BB", buf, 4)
    if tag != DTYPE_F32:
        raise MgtFormatError(f"unsupported dtype tag {tag}")
    dims = struct.unpack_from(f"<{ndim}Q", buf, 6) if ndim else ()
    offset = 6 + 8 * ndim
    count = int(np.prod(dims)) if ndim else 1
    payload = np.frombuffer(buf, dtype="<f4", count=count, offset=offset)
    if payload.size != count:
        raise MgtFormatError(f"truncated payload: expected {count} floats, got {payload.size}")
    return payload.reshape(dims).copy()


def write(path, arr: np.ndarray):
    with open(path, "wb") as f:
        f.write(to_bytes(arr))


def read(path) -> np.ndarray:
    with open(path, "rb") as f:
        return from_bytes(f.read())
