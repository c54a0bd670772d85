"""File formats: embedding matrices, label files, JSON reports.

Matrices are either CSV (one row per sample) or a little-endian binary
block: the magic bytes ``MLL1``, then ``n`` and ``d`` as unsigned 64-bit
integers, then ``n * d`` float64 values in row-major order.
"""

import json
import struct

import numpy as np

__all__ = ["MAGIC", "read_matrix", "write_matrix", "read_labels", "write_labels",
           "write_json", "read_json"]

MAGIC = b"MLL1"
_HEADER = struct.Struct("<4sQQ")


def read_matrix(path):
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        return _read_binary(path)
    Z = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    if Z.size == 0:
        raise ValueError(f"{path}: empty matrix")
    return Z


def _read_binary(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    _, n, d = _HEADER.unpack_from(raw)
    body = raw[_HEADER.size:]
    if len(body) != 8 * n * d:
        raise ValueError(f"{path}: expected {n}x{d} float64 values, got {len(body)} bytes")
    return np.frombuffer(body, dtype="<f8").reshape(n, d).astype(np.float64)


def write_matrix(path, Z, binary=False):
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    if binary:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, *Z.shape))
            fh.write(np.ascontiguousarray(Z, dtype="<f8").tobytes())
    else:
        with open(path, "w") as fh:
            for row in Z:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_labels(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    try:
        return np.array([int(ln) for ln in lines], dtype=np.int64)
    except ValueError as exc:
        raise ValueError(f"{path}: labels must be one integer per line") from exc


def write_labels(path, y):
    with open(path, "w") as fh:
        for v in np.asarray(y).ravel():
            fh.write(f"{int(v)}\n")


def _default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, np.bool_)):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_default)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)
