"""DWT binary weight container: bit-exact serialization of named tensors.

File layout (all integers little-endian):

    magic   "DWT1"                      4 bytes
    version u16                         (currently 1)
    meta    u32 length + UTF-8 JSON     {"arch": ..., "nc": ..., "bn_eps": ..., "normalization": ...}
    count   u32                         number of records
    records, sorted by name:
        name_len u16, name bytes
        dtype    u8                     0 = f32, 1 = f16
        ndim     u8
        dims     u32 * ndim
        payload  raw little-endian values
    crc     u32                         CRC32 of every preceding byte

Half-precision storage is the canonical distribution dtype; values are
upcast to f32 on load, so a second f16 save round-trips bit-exactly.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"DWT1"
FORMAT_VERSION = 1
FILE_EXTENSION = ".dwt"

_DTYPE_CODES = {"f32": 0, "f16": 1}
_DTYPE_NAMES = {0: "f32", 1: "f16"}
_ELEM_SIZE = {"f32": 4, "f16": 2}


class WeightFormatError(Exception):
    """Base class for malformed weight files."""


class BadMagicError(WeightFormatError):
    pass


class UnsupportedVersionError(WeightFormatError):
    pass


class ChecksumError(WeightFormatError):
    pass


class TruncatedFileError(WeightFormatError):
    pass


@dataclass(frozen=True)
class TensorRecord:
    """One named tensor: dot-separated name, dims, and f32 values.

    ``stored_dtype`` records how the tensor was (or will be) serialized;
    in-memory values are always float32.
    """

    name: str
    dims: tuple[int, ...]
    values: np.ndarray
    stored_dtype: str = "f32"

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float32).reshape(self.dims)
        v = v.view()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        if self.stored_dtype not in _DTYPE_CODES:
            raise ValueError(f"unknown dtype {self.stored_dtype!r}")

    @property
    def num_values(self) -> int:
        return int(np.prod(self.dims, dtype=np.int64)) if self.dims else 1


@dataclass
class WeightStore:
    """A named-tensor map plus the metadata needed to interpret it."""

    records: dict[str, TensorRecord] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def add(self, name: str, values: np.ndarray) -> None:
        if name in self.records:
            raise ValueError(f"duplicate tensor name {name!r}")
        arr = np.asarray(values, dtype=np.float32)
        self.records[name] = TensorRecord(name=name, dims=arr.shape, values=arr)

    def __contains__(self, name: str) -> bool:
        return name in self.records

    def __getitem__(self, name: str) -> np.ndarray:
        return self.records[name].values

    def names(self) -> list[str]:
        return sorted(self.records)

    def payload_crc(self) -> int:
        """CRC32 over all payload bytes in name order; cheap content fingerprint."""
        crc = 0
        for name in self.names():
            crc = zlib.crc32(self.records[name].values.tobytes(), crc)
        return crc & 0xFFFFFFFF


def f32_to_f16(x: float) -> int:
    """IEEE 754 binary16 bit pattern for x (round-to-nearest-even)."""
    with np.errstate(over="ignore"):
        return int(np.float32(x).astype(np.float16).view(np.uint16))


def f16_to_f32(bits: int) -> float:
    """Value of an IEEE 754 binary16 bit pattern as a Python float."""
    return float(np.uint16(bits).view(np.float16))


def _quantize(values: np.ndarray, dtype: str) -> bytes:
    if dtype == "f32":
        return values.astype("<f4").tobytes()
    with np.errstate(over="ignore"):
        return values.astype("<f2").tobytes()


def dwt_bytes(store: WeightStore, dtype: str = "f16") -> bytes:
    """Serialize a store to DWT bytes. Records are written sorted by name."""
    if dtype not in _DTYPE_CODES:
        raise ValueError(f"unknown dtype {dtype!r}")
    meta = json.dumps(store.metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<H", FORMAT_VERSION)
    out += struct.pack("<I", len(meta))
    out += meta
    out += struct.pack("<I", len(store.records))
    for name in store.names():
        rec = store.records[name]
        name_b = name.encode("utf-8")
        if len(name_b) > 0xFFFF:
            raise ValueError(f"tensor name too long: {name!r}")
        out += struct.pack("<H", len(name_b))
        out += name_b
        out += struct.pack("<BB", _DTYPE_CODES[dtype], len(rec.dims))
        out += struct.pack(f"<{len(rec.dims)}I", *rec.dims)
        out += _quantize(rec.values, dtype)
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    return bytes(out)


def save_dwt(store: WeightStore, path: str | Path, dtype: str = "f16") -> int:
    """Write the store to disk; returns the number of bytes written."""
    data = dwt_bytes(store, dtype)
    Path(path).write_bytes(data)
    return len(data)


def model_size_bytes(store: WeightStore, dtype: str = "f16") -> int:
    """Exact serialized size without writing anything."""
    if dtype not in _DTYPE_CODES:
        raise ValueError(f"unknown dtype {dtype!r}")
    meta = json.dumps(store.metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    size = len(MAGIC) + 2 + 4 + len(meta) + 4
    for name in store.names():
        rec = store.records[name]
        size += 2 + len(name.encode("utf-8")) + 1 + 1 + 4 * len(rec.dims)
        size += rec.num_values * _ELEM_SIZE[dtype]
    return size + 4


class _Reader:
    """Bounds-checked cursor over a byte buffer."""

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedFileError(
                f"file ends inside {what}: need {n} bytes at offset {self.pos}, "
                f"have {len(self.buf) - self.pos}"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def load_dwt_bytes(data: bytes) -> WeightStore:
    """Parse DWT bytes; raises a distinct error per failure mode."""
    if len(data) < len(MAGIC) + 2 + 4:
        raise TruncatedFileError(f"file too short to hold a header: {len(data)} bytes")
    if data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    version = struct.unpack("<H", data[4:6])[0]
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"format version {version}, supported: {FORMAT_VERSION}")
    if len(data) < 10:
        raise TruncatedFileError("missing CRC trailer")
    stored_crc = struct.unpack("<I", data[-4:])[0]
    actual_crc = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise ChecksumError(f"CRC mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}")

    r = _Reader(data[:-4])
    r.pos = 6
    meta_len = r.u32("metadata length")
    meta_raw = r.take(meta_len, "metadata")
    try:
        metadata = json.loads(meta_raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise WeightFormatError(f"metadata is not valid JSON: {e}") from e
    count = r.u32("record count")
    store = WeightStore(metadata=metadata)
    for i in range(count):
        name_len = r.u16(f"record {i} name length")
        try:
            name = r.take(name_len, f"record {i} name").decode("utf-8")
        except UnicodeDecodeError as e:
            raise WeightFormatError(f"record {i} name is not UTF-8: {e}") from e
        dtype_code = r.u8(f"record {i} dtype")
        if dtype_code not in _DTYPE_NAMES:
            raise WeightFormatError(f"record {name!r} has unknown dtype code {dtype_code}")
        ndim = r.u8(f"record {i} ndim")
        dims = struct.unpack(f"<{ndim}I", r.take(4 * ndim, f"record {name!r} dims"))
        n_values = 1
        for d in dims:
            n_values *= d
        elem = 4 if dtype_code == 0 else 2
        payload = r.take(n_values * elem, f"record {name!r} payload")
        values = np.frombuffer(payload, dtype="<f4" if dtype_code == 0 else "<f2")
        if name in store.records:
            raise WeightFormatError(f"duplicate tensor name {name!r}")
        store.records[name] = TensorRecord(
            name=name,
            dims=dims,
            values=values.astype(np.float32).reshape(dims),
            stored_dtype=_DTYPE_NAMES[dtype_code],
        )
    if r.pos != len(r.buf):
        raise WeightFormatError(f"{len(r.buf) - r.pos} trailing bytes after last record")
    return store


def load_dwt(path: str | Path) -> WeightStore:
    return load_dwt_bytes(Path(path).read_bytes())
