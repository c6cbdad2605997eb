"""Single-file binary container: a version byte, then length-prefixed named sections.

Layout: [u8 version] then repeated [u32 name_len][name utf-8]
[u32 payload_len][payload]; all integers little-endian. Array payloads
add [u8 dtype tag][u8 ndim][u32 dims...] before raw little-endian data.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

__all__ = ["CONTAINER_VERSION", "pack_array", "unpack_array", "write_container", "read_container"]

CONTAINER_VERSION = 1

_TAG_TO_DTYPE = {0: "<f4", 1: "<i8", 2: "|u1"}
_DTYPE_TO_TAG = {np.dtype(d): t for t, d in _TAG_TO_DTYPE.items()}


def pack_array(a: np.ndarray) -> bytes:
    a = np.ascontiguousarray(a)
    tag = _DTYPE_TO_TAG.get(a.dtype.newbyteorder("<") if a.dtype.byteorder == ">" else a.dtype)
    if tag is None:
        raise FormatError(f"unsupported array dtype {a.dtype}")
    head = struct.pack("<BB", tag, a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return head + a.astype(_TAG_TO_DTYPE[tag], copy=False).tobytes()


def unpack_array(payload: bytes) -> np.ndarray:
    if len(payload) < 2:
        raise FormatError("array payload truncated")
    tag, ndim = struct.unpack_from("<BB", payload)
    if tag not in _TAG_TO_DTYPE:
        raise FormatError(f"unknown array dtype tag {tag}")
    dims = struct.unpack_from(f"<{ndim}I", payload, 2)
    data = payload[2 + 4 * ndim:]
    dtype = np.dtype(_TAG_TO_DTYPE[tag])
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(data) != expected:
        raise FormatError(f"array payload: expected {expected} data bytes, got {len(data)}")
    return np.frombuffer(data, dtype=dtype).reshape(dims).copy()


def write_container(path, sections):
    """Write named sections in order; `sections` is an iterable of (name, bytes)."""
    out = bytearray()
    out.append(CONTAINER_VERSION)
    for name, payload in sections:
        raw = name.encode("utf8")
        out += struct.pack("<I", len(raw)) + raw
        out += struct.pack("<I", len(payload)) + payload
    Path(path).write_bytes(bytes(out))


def read_container(path) -> dict[str, bytes]:
    """Read all sections into an ordered name -> bytes mapping."""
    blob = Path(path).read_bytes()
    if not blob:
        raise FormatError(f"{path}: empty container")
    if blob[0] != CONTAINER_VERSION:
        raise FormatError(f"{path}: unsupported container version {blob[0]}")
    sections: dict[str, bytes] = {}
    pos = 1
    while pos < len(blob):
        if pos + 4 > len(blob):
            raise FormatError(f"{path}: truncated section header at byte {pos}")
        (name_len,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos:pos + name_len].decode("utf8")
        pos += name_len
        if pos + 4 > len(blob):
            raise FormatError(f"{path}: truncated length for section {name!r}")
        (payload_len,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        if pos + payload_len > len(blob):
            raise FormatError(
                f"{path}: section {name!r} wants {payload_len} bytes, "
                f"{len(blob) - pos} remain"
            )
        sections[name] = blob[pos:pos + payload_len]
        pos += payload_len
    return sections
