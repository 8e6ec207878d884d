"""Minimal writer for the DWT weight container.

Implements the published byte layout: magic "DWT1", version u16, u32
length-prefixed UTF-8 JSON metadata, u32 record count, records sorted by
name (u16 name length + name, dtype u8 0=f32/1=f16, ndim u8, dims u32*ndim,
raw little-endian payload), and a trailing CRC32 of everything prior.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

MAGIC = b"DWT1"
FORMAT_VERSION = 1
_DTYPE_CODES = {"f32": 0, "f16": 1}
_NP_DTYPES = {"f32": "<f4", "f16": "<f2"}


def dwt_bytes(tensors: dict[str, np.ndarray], metadata: dict, dtype: str = "f32") -> bytes:
    if dtype not in _DTYPE_CODES:
        raise ValueError(f"unknown dtype {dtype!r}")
    meta = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<H", FORMAT_VERSION)
    out += struct.pack("<I", len(meta))
    out += meta
    out += struct.pack("<I", len(tensors))
    for name in sorted(tensors):
        values = np.ascontiguousarray(tensors[name], dtype=np.float32)
        name_b = name.encode("utf-8")
        out += struct.pack("<H", len(name_b))
        out += name_b
        out += struct.pack("<BB", _DTYPE_CODES[dtype], values.ndim)
        out += struct.pack(f"<{values.ndim}I", *values.shape)
        with np.errstate(over="ignore"):
            out += values.astype(_NP_DTYPES[dtype]).tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    return bytes(out)
