"""Little-endian "BSNN" parameter files.

Layout: magic b"BSNN", version u32, then one record per tensor:
name length u32, UTF-8 name, rank u32, dims u32[rank], f64 payload.
"""
from __future__ import annotations

import struct

import numpy as np

from ..errors import FormatError

MAGIC = b"BSNN"
VERSION = 1


def save_params(params, path):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        for name, value in params.items():
            arr = np.ascontiguousarray(getattr(value, "data", value), dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_params(path):
    """Read a BSNN file into an ordered dict of name -> float64 array."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise FormatError(f"{path}: truncated at byte {pos}")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    out = {}
    while pos < len(blob):
        (n,) = struct.unpack("<I", take(4))
        name = take(n).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        out[name] = np.frombuffer(take(8 * count), dtype="<f8").reshape(dims).astype(np.float64)
    return out
