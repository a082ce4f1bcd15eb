"""Binary artifact container.

Every persisted artifact (parameter snapshots, classifiers, synthesizers)
uses one versioned format: magic header ``MCS1``, explicit shape headers,
little-endian 64-bit floats, and a sha256 checksum over the payload so a
truncated or corrupted file is rejected instead of silently misread.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MCS1"
VERSION = 1

_KIND_ARRAY = 0
_KIND_TEXT = 1


class ContainerError(Exception):
    """Raised for malformed, truncated or incompatible containers."""


def _pack_name(name: str) -> bytes:
    raw = name.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ContainerError(f"entry name too long: {name[:40]}...")
    return struct.pack("<H", len(raw)) + raw


def write_container(path: str | Path, entries: dict[str, np.ndarray | str]) -> None:
    """Write named arrays and text blobs. Entry order is preserved,
    which keeps the output byte-identical for identical inputs."""
    chunks: list[bytes] = []
    for name, value in entries.items():
        if isinstance(value, str):
            raw = value.encode("utf-8")
            chunks.append(struct.pack("<B", _KIND_TEXT) + _pack_name(name))
            chunks.append(struct.pack("<Q", len(raw)) + raw)
        else:
            arr = np.asarray(value, dtype=np.float64)
            if arr.ndim:
                arr = np.ascontiguousarray(arr)
            chunks.append(struct.pack("<B", _KIND_ARRAY) + _pack_name(name))
            chunks.append(struct.pack("<B", arr.ndim))
            chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b"")
            chunks.append(arr.astype("<f8").tobytes())
    payload = b"".join(chunks)
    digest = hashlib.sha256(payload).digest()
    blob = MAGIC + struct.pack("<HQ", VERSION, len(payload)) + payload + digest
    Path(path).write_bytes(blob)


def read_container(path: str | Path) -> dict[str, np.ndarray | str]:
    raw = Path(path).read_bytes()
    if len(raw) < 14 or raw[:4] != MAGIC:
        raise ContainerError(f"{path}: not a {MAGIC.decode()} container")
    version, payload_len = struct.unpack("<HQ", raw[4:14])
    if version != VERSION:
        raise ContainerError(f"{path}: unsupported container version {version}")
    payload = raw[14 : 14 + payload_len]
    digest = raw[14 + payload_len : 14 + payload_len + 32]
    if len(payload) != payload_len or len(digest) != 32:
        raise ContainerError(f"{path}: truncated container")
    if hashlib.sha256(payload).digest() != digest:
        raise ContainerError(f"{path}: checksum mismatch")

    entries: dict[str, np.ndarray | str] = {}
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(payload):
            raise ContainerError(f"{path}: payload ends mid-record")
        out = payload[pos : pos + n]
        pos += n
        return out

    while pos < len(payload):
        kind = take(1)[0]
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        if kind == _KIND_TEXT:
            (blob_len,) = struct.unpack("<Q", take(8))
            entries[name] = take(blob_len).decode("utf-8")
        elif kind == _KIND_ARRAY:
            ndim = take(1)[0]
            shape = struct.unpack(f"<{ndim}Q", take(8 * ndim)) if ndim else ()
            count = int(np.prod(shape)) if shape else 1
            data = take(8 * count)
            entries[name] = np.frombuffer(data, dtype="<f8").reshape(shape).copy()
        else:
            raise ContainerError(f"{path}: unknown record kind {kind}")
    return entries
