"""
Deterministic input generation and matrix file I/O.

Inputs are uniform in [-1, 1] from a PCG64 generator and are rounded to the
kernel's storage precision before use, so simulated kernels and reference
oracles consume bit-identical operands for a given seed.
"""

from __future__ import annotations

import struct

import numpy as np

_MAGIC = b"CSMX"


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def generate_matrix(rng, rows, cols, precision):
    """Uniform [-1, 1] matrix rounded to the storage precision."""
    data = rng.uniform(-1.0, 1.0, size=(rows, cols))
    if precision == "fp16":
        return data.astype(np.float16)
    return data.astype(np.float32)


def matrix_bytes(mat):
    return np.ascontiguousarray(mat).tobytes()


def save_matrix(path, mat):
    """Binary row-major dump with a small self-describing header."""
    mat = np.ascontiguousarray(mat)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIH", mat.shape[0], mat.shape[1], mat.itemsize))
        fh.write(mat.tobytes())


def load_matrix(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a matrix file")
        rows, cols, itemsize = struct.unpack("<IIH", fh.read(10))
        dtype = {2: np.float16, 4: np.float32}.get(itemsize)
        if dtype is None:
            raise ValueError(f"{path}: unsupported element size {itemsize}")
        payload = fh.read(rows * cols * itemsize)
    return np.frombuffer(payload, dtype=dtype).reshape(rows, cols).copy()


def max_rel_error(actual, expected, floor=1e-6):
    """Largest elementwise |actual-expected| / max(|expected|, floor)."""
    actual = np.asarray(actual, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    denom = np.maximum(np.abs(expected), floor)
    return float(np.max(np.abs(actual - expected) / denom)) if actual.size else 0.0
