"""Flat binary parameter checkpoints.

Layout (all integers little-endian)::

    magic     4 bytes  b"STCK"
    version   1 byte   (currently 1)
    records   until EOF, each:
        name_len  uint32
        name      name_len bytes, UTF-8
        rank      uint32
        extents   rank x uint32
        values    prod(extents) x float64
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"STCK"
VERSION = 1


class CheckpointFormatError(ValueError):
    pass


def dumps(state: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, bytes([VERSION])]
    for name, arr in state.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def loads(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:4] != MAGIC:
        raise CheckpointFormatError(f"bad magic {buf[:4]!r} at offset 0")
    if len(buf) < 5:
        raise CheckpointFormatError("truncated header at offset 4")
    if buf[4] != VERSION:
        raise CheckpointFormatError(f"unsupported version {buf[4]} at offset 4")
    off = 5
    state: dict[str, np.ndarray] = {}

    def take(n: int, what: str) -> bytes:
        nonlocal off
        if off + n > len(buf):
            raise CheckpointFormatError(f"truncated {what} at offset {off}")
        chunk = buf[off:off + n]
        off += n
        return chunk

    while off < len(buf):
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        try:
            name = take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointFormatError(f"invalid UTF-8 name ending at offset {off}") from exc
        if name in state:
            raise CheckpointFormatError(f"duplicate record {name!r} ending at offset {off}")
        (rank,) = struct.unpack("<I", take(4, "rank"))
        shape = struct.unpack(f"<{rank}I", take(4 * rank, "extents"))
        count = int(np.prod(shape, dtype=np.int64))
        values = np.frombuffer(take(8 * count, f"values of {name!r}"), dtype="<f8")
        state[name] = values.reshape(shape).astype(np.float64)
    return state


def save(path: str | Path, state: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(state))


def load(path: str | Path) -> dict[str, np.ndarray]:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"checkpoint not found: {p}")
    try:
        return loads(p.read_bytes())
    except CheckpointFormatError as exc:
        raise CheckpointFormatError(f"{p}: {exc}") from None
