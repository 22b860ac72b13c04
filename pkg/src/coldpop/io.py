"""Binary and text formats for embeddings, feature matrices and sidecars.

EMB1 layout (all little-endian)::

    b"EMB1" | uint32 rows | uint32 cols | rows*cols float32, row-major

Small matrices may also be stored as CSV with a ``dim0,dim1,...`` header.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"EMB1"
_HEADER = struct.Struct("<4sII")


def write_emb(path, matrix) -> Path:
    path = Path(path)
    arr = np.asarray(matrix)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"refusing to write non-finite values to {path}")
    rows, cols = arr.shape
    body = np.ascontiguousarray(arr, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, rows, cols))
        fh.write(body.tobytes(order="C"))
    return path


def read_emb(path) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise DataError(f"{path}: truncated EMB1 header")
    magic, rows, cols = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    expected = _HEADER.size + 4 * rows * cols
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes for {rows}x{cols}, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size, count=rows * cols)
    return data.reshape(rows, cols).astype(np.float32)


def write_matrix_csv(path, matrix) -> Path:
    path = Path(path)
    arr = np.asarray(matrix, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"dim{j}" for j in range(arr.shape[1])])
        for row in arr:
            w.writerow([repr(float(v)) for v in row])
    return path


def read_matrix_csv(path) -> np.ndarray:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty CSV") from None
        if header != [f"dim{j}" for j in range(len(header))]:
            raise DataError(f"{path}: header must be dim0,dim1,...")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return np.array(rows, dtype=np.float64).reshape(len(rows), len(header))


def read_matrix(path) -> np.ndarray:
    """Read an EMB1 file, or a CSV matrix when the suffix is ``.csv``."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_matrix_csv(path)
    return read_emb(path)


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_json(path, payload) -> Path:
    path = Path(path)
    # sorted keys + fixed indent keep sidecars byte-stable across runs
    path.write_text(json.dumps(to_jsonable(payload), indent=2, sort_keys=True) + "\n")
    return path


def write_sidecar(path, payload) -> Path:
    return write_json(sidecar_path(path), payload)


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj
