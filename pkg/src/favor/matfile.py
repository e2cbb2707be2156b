"""FAVMAT01 matrix files: ``b"FAVMAT01"``, ``<u32 rows, cols>``, then
little-endian f64 entries in row-major order."""

import struct

import numpy as np

from favor.errors import DomainError

MAGIC = b"FAVMAT01"


def matrix_to_bytes(A):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise DomainError("FAVMAT01 stores 2-D matrices only")
    return MAGIC + struct.pack("<2I", *A.shape) + np.ascontiguousarray(A, dtype="<f8").tobytes()


def matrix_from_bytes(buf):
    if buf[:8] != MAGIC:
        raise DomainError("not a FAVMAT01 file")
    rows, cols = struct.unpack_from("<2I", buf, 8)
    body = buf[16:]
    if len(body) != 8 * rows * cols:
        raise DomainError(f"expected {8 * rows * cols} payload bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f8").reshape(rows, cols).astype(float)


def save_matrix(path, A):
    with open(path, "wb") as fh:
        fh.write(matrix_to_bytes(A))


def load_matrix(path):
    with open(path, "rb") as fh:
        return matrix_from_bytes(fh.read())
