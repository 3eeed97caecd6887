"""Versioned binary container for named parameter tensors.

Layout (all integers little-endian uint32):

    magic   4 bytes  b"VRCP"
    version uint32   currently 1
    count   uint32   number of records
    record: name_len uint32, name utf-8 bytes,
            rank uint32, extents rank * uint32,
            values prod(extents) little-endian float32

Values are stored as float32 regardless of compute precision, so a
float32 store round-trips bit-exactly.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"VRCP"
VERSION = 1


class CheckpointError(RuntimeError):
    """Raised for malformed or truncated checkpoint files."""


def save_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    """Write named arrays to `path`; insertion order is preserved."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, values in tensors.items():
        # np.ascontiguousarray would promote 0-d scalars to 1-d; tobytes()
        # below already emits row-major bytes for any layout.
        arr = np.asarray(values, dtype="<f4")
        name_bytes = name.encode("utf-8")
        parts.append(struct.pack("<I", len(name_bytes)))
        parts.append(name_bytes)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read a container written by :func:`save_checkpoint`."""
    blob = Path(path).read_bytes()
    view = memoryview(blob)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError(f"{path}: truncated at byte {pos} (wanted {n} more)")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a parameter checkpoint")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported container version {version}")

    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = bytes(take(name_len)).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        extents = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        n_values = int(np.prod(extents)) if extents else 1
        arr = np.frombuffer(take(4 * n_values), dtype="<f4").reshape(extents)
        out[name] = arr.astype(np.float32).copy()
    if pos != len(view):
        raise CheckpointError(f"{path}: {len(view) - pos} trailing bytes after last record")
    return out
