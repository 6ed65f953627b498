"""Flat binary tensor files: 16-byte header + little-endian float32 payload.

Record layout: four little-endian uint32 header words (dim0, dim1, dim2,
meta) followed by dim0*dim1*dim2 float32 values in C order.  The meta word
carries format-specific information (the heatmap codec stores its stride
there).  A file may hold several records back to back.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ParseError

_HEADER = struct.Struct("<4I")


def pack_tensor(array: np.ndarray, meta: int = 0) -> bytes:
    a = np.ascontiguousarray(array, dtype="<f4")
    if a.ndim == 1:
        a = a.reshape(a.shape[0], 1, 1)
    elif a.ndim == 2:
        a = a.reshape(a.shape[0], a.shape[1], 1)
    if a.ndim != 3:
        raise ValueError(f"tensor must have <= 3 dims, got shape {array.shape}")
    return _HEADER.pack(a.shape[0], a.shape[1], a.shape[2], meta) + a.tobytes()


def unpack_tensors(blob: bytes, source: str = "<bytes>") -> list[tuple[np.ndarray, int]]:
    records: list[tuple[np.ndarray, int]] = []
    pos = 0
    while pos < len(blob):
        if pos + _HEADER.size > len(blob):
            raise ParseError(f"{source}: truncated tensor header at byte {pos}")
        d0, d1, d2, meta = _HEADER.unpack_from(blob, pos)
        pos += _HEADER.size
        count = d0 * d1 * d2
        nbytes = count * 4
        if pos + nbytes > len(blob):
            raise ParseError(f"{source}: truncated tensor payload at byte {pos}")
        data = np.frombuffer(blob, dtype="<f4", count=count, offset=pos).reshape(d0, d1, d2)
        records.append((data.copy(), meta))
        pos += nbytes
    return records


def save_tensors(path: str | Path, records: list[tuple[np.ndarray, int]]) -> None:
    Path(path).write_bytes(b"".join(pack_tensor(a, m) for a, m in records))


def load_tensors(path: str | Path) -> list[tuple[np.ndarray, int]]:
    p = Path(path)
    return unpack_tensors(p.read_bytes(), source=str(p))
