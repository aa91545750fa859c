"""Tensor snapshots: ``<u32 ndim><u64 dims...>`` followed by little-endian float64 values."""

import struct

import numpy as np


def tensor_to_bytes(array) -> bytes:
    a = np.asarray(array, dtype="<f8")
    header = struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
    return header + a.tobytes()


def tensor_from_bytes(buf: bytes, offset: int = 0):
    """Decode one snapshot starting at ``offset``; returns ``(array, next_offset)``."""
    (ndim,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    shape = struct.unpack_from(f"<{ndim}Q", buf, offset)
    offset += 8 * ndim
    count = int(np.prod(shape)) if ndim else 1
    end = offset + 8 * count
    if end > len(buf):
        raise ValueError("tensor snapshot truncated")
    data = np.frombuffer(buf[offset:end], dtype="<f8").reshape(shape).astype(np.float64)
    return data, end
