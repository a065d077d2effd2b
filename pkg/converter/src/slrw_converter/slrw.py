"""Writer for the .slrw tensor-bundle format.

Byte layout, all integers little-endian:

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

This is a deliberately independent implementation of the format the
inference engine reads; the two packages share only the bytes.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"SLRW1"
MAX_RANK = 4


def write_bundle(entries, metadata: dict[str, str] | None = None) -> bytes:
    """Serialize an ordered name->tensor mapping to .slrw bytes."""
    metadata = dict(metadata or {})
    for k, v in metadata.items():
        if not k or "=" in k or "\n" in k:
            raise ValueError(f"invalid metadata key {k!r}")
        if "\n" in v:
            raise ValueError(f"metadata value for {k!r} must not contain newlines")

    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", len(entries))
    meta_block = "\n".join(f"{k}={v}" for k, v in metadata.items()).encode("utf-8")
    out += struct.pack("<I", len(meta_block))
    out += meta_block
    for name, tensor in entries.items():
        arr = np.ascontiguousarray(tensor, dtype=np.float32)
        if not 1 <= arr.ndim <= MAX_RANK:
            raise ValueError(f"entry {name!r} has rank {arr.ndim}; supported ranks are 1..{MAX_RANK}")
        if arr.size == 0:
            raise ValueError(f"entry {name!r} is empty")
        if not np.isfinite(arr).all():
            raise ValueError(f"entry {name!r} contains non-finite values")
        name_b = name.encode("utf-8")
        if not 1 <= len(name_b) <= 0xFFFF:
            raise ValueError(f"entry name {name!r} too long or empty")
        out += struct.pack("<H", len(name_b))
        out += name_b
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes()
    return bytes(out)
