"""Writer (and check-reader) for the engine's binary embedding format.

Layout: 4-byte magic "KGDE", little-endian u32 version=1, u32 rows, u32
cols, then rows*cols little-endian float32 values in row-major order.
Re-implemented here so the exporter depends on the engine only through its
file formats.
"""

import struct
from pathlib import Path

import numpy as np

MAGIC = b"KGDE"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


class KgdeError(Exception):
    pass


def write_kgde(path, matrix):
    m = np.ascontiguousarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise KgdeError("embedding matrix must be non-empty and 2-D")
    if not np.isfinite(m).all():
        raise KgdeError("refusing to write non-finite embeddings")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, m.shape[0], m.shape[1]))
        fh.write(m.astype("<f4").tobytes())


def read_kgde(path):
    data = Path(path).read_bytes()
    magic, version, rows, cols = _HEADER.unpack_from(data)
    if magic != MAGIC or version != VERSION:
        raise KgdeError(f"{path}: not a KGDE v{VERSION} file")
    payload = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    if payload.size != rows * cols:
        raise KgdeError(f"{path}: payload size mismatch")
    return payload.astype(np.float64).reshape(rows, cols)
