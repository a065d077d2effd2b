"""The .slrw weight-bundle format: named float32 tensors plus metadata.

Byte layout (all integers little-endian):

    magic         5 bytes  b"SLRW1"
    entry_count   u32
    metadata_len  u32
    metadata      UTF-8, "key=value" lines joined by "\\n"
    entries, entry_count times:
        name_len  u16
        name      UTF-8
        rank      u8       (1..4)
        dims      rank x u32, each >= 1
        data      prod(dims) x f32

Writing is byte-deterministic for identical input. The reader validates
magic, counts, and every declared length against the remaining stream
before allocating anything.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from signet.errors import FormatError, NumericError
from signet.nnops.kernels import as_f32, require_finite

MAGIC = b"SLRW1"
MAX_RANK = 4


@dataclass
class WeightBundle:
    """Ordered name -> tensor map with a small key=value metadata block."""

    entries: dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict[str, str] = field(default_factory=dict)
    version: int = 1

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __getitem__(self, name: str) -> np.ndarray:
        return self.entries[name]


def _check_metadata(metadata: dict[str, str]) -> None:
    for k, v in metadata.items():
        if "=" in k or "\n" in k or not k:
            raise FormatError(f"invalid metadata key {k!r}")
        if "\n" in v:
            raise FormatError(f"metadata value for {k!r} must not contain newlines")


def write_bundle(entries, metadata: dict[str, str] | None = None) -> bytes:
    """Serialize an ordered name->tensor mapping to .slrw bytes."""
    if hasattr(entries, "items"):
        pairs = list(entries.items())
    else:
        pairs = list(entries)
    seen = set()
    for name, _ in pairs:
        if name in seen:
            raise FormatError(f"duplicate bundle entry name {name!r}")
        seen.add(name)
    metadata = dict(metadata or {})
    _check_metadata(metadata)

    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", len(pairs))
    meta_block = "\n".join(f"{k}={v}" for k, v in metadata.items()).encode("utf-8")
    out += struct.pack("<I", len(meta_block))
    out += meta_block
    for name, tensor in pairs:
        arr = as_f32(tensor)
        if not 1 <= arr.ndim <= MAX_RANK:
            raise FormatError(
                f"bundle entry {name!r} has rank {arr.ndim}; only ranks 1..{MAX_RANK} supported"
            )
        require_finite(arr, f"bundle entry {name!r}")
        name_b = name.encode("utf-8")
        if not 1 <= len(name_b) <= 0xFFFF:
            raise FormatError(f"bundle entry name {name!r} too long or empty")
        out += struct.pack("<H", len(name_b))
        out += name_b
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes()
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated bundle while reading {what}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def read_bundle(data: bytes) -> WeightBundle:
    """Parse .slrw bytes; exact inverse of write_bundle."""
    r = _Reader(data)
    magic = r.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}; expected {MAGIC!r}")
    entry_count = r.u32("entry count")
    meta_len = r.u32("metadata length")
    meta_block = r.take(meta_len, "metadata")
    try:
        meta_text = meta_block.decode("utf-8")
    except UnicodeDecodeError as e:
        raise FormatError(f"metadata is not valid UTF-8: {e}") from None
    metadata: dict[str, str] = {}
    if meta_text:
        for line in meta_text.split("\n"):
            key, sep, value = line.partition("=")
            if not sep or not key:
                raise FormatError(f"malformed metadata line {line!r}")
            metadata[key] = value

    entries: dict[str, np.ndarray] = {}
    for i in range(entry_count):
        label = f"entry {i}"
        name_len = r.u16(f"{label} name length")
        if name_len == 0:
            raise FormatError(f"{label} has empty name")
        try:
            name = r.take(name_len, f"{label} name").decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError(f"{label} name is not valid UTF-8: {e}") from None
        label = f"entry {name!r}"
        if name in entries:
            raise FormatError(f"duplicate bundle entry name {name!r}")
        rank = r.u8(f"{label} rank")
        if not 1 <= rank <= MAX_RANK:
            raise FormatError(f"{label} has rank {rank}; only ranks 1..{MAX_RANK} supported")
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, f"{label} dims"))
        if any(d < 1 for d in dims):
            raise FormatError(f"{label} has non-positive dims {dims}")
        count = 1
        for d in dims:
            count *= d
        nbytes = count * 4
        if r.pos + nbytes > len(r.data):
            raise FormatError(
                f"truncated bundle while reading {label}: "
                f"declared {nbytes} data bytes, {len(r.data) - r.pos} remain"
            )
        raw = r.take(nbytes, f"{label} data")
        arr = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32)
        if not np.isfinite(arr).all():
            raise NumericError(f"bundle entry {name!r} contains non-finite values")
        entries[name] = arr
    if r.pos != len(r.data):
        raise FormatError(f"{len(r.data) - r.pos} trailing bytes after last entry")
    return WeightBundle(entries=entries, metadata=metadata)


def save_bundle(path, entries, metadata: dict[str, str] | None = None) -> None:
    with open(path, "wb") as f:
        f.write(write_bundle(entries, metadata))


def load_bundle(path) -> WeightBundle:
    with open(path, "rb") as f:
        return read_bundle(f.read())
