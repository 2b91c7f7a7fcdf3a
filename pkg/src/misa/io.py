"""Matrix persistence: a little-endian binary format and CSV interchange.

Binary layout: magic "MISA", u32 row count, u32 column count, then row-major
float64 payload. Round-trips are bit-exact. CSV uses 17 significant digits,
which round-trips IEEE doubles exactly through repr-quality parsing.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ParseError

MAGIC = b"MISA"
_HEADER = struct.Struct("<4sII")


def save_matrix(path, matrix: np.ndarray) -> None:
    path = Path(path)
    M = np.ascontiguousarray(np.atleast_2d(matrix), dtype="<f8")
    if path.suffix.lower() == ".csv":
        with open(path, "w") as fh:
            for row in M:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
        return
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, M.shape[0], M.shape[1]))
        fh.write(M.tobytes(order="C"))


def load_matrix(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return _load_csv(path)
    raw = path.read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise ParseError(f"{path}: bad or missing magic at byte 0")
    if len(raw) < _HEADER.size:
        raise ParseError(f"{path}: truncated header at byte {len(raw)}")
    _, rows, cols = _HEADER.unpack_from(raw)
    expected = _HEADER.size + rows * cols * 8
    if len(raw) != expected:
        raise ParseError(
            f"{path}: payload size mismatch at byte {_HEADER.size}: "
            f"expected {expected} total bytes for {rows}x{cols}, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    return data.reshape(rows, cols).copy()


def _load_csv(path: Path) -> np.ndarray:
    rows = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise ParseError(f"{path}: ragged row {lineno}: "
                                 f"expected {width} fields, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as e:
                raise ParseError(f"{path}: row {lineno}: {e}") from None
    if not rows:
        raise ParseError(f"{path}: empty file")
    return np.asarray(rows, dtype=float)
