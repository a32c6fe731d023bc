"""Dense float32 vectors/matrices, the reference GEMV and the thresholded ReLU.

Vectors are 1-D ``float32`` arrays and matrices are C-contiguous 2-D
``float32`` arrays of shape ``(rows, cols)``: one row per output element.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

DTYPE = np.float32


class ShapeError(ValueError):
    """Operand dimensions do not line up."""


class NonFiniteError(ValueError):
    """NaN or Inf found where only finite values are allowed."""


def as_vector(data, *, check_finite: bool = True) -> np.ndarray:
    v = np.ascontiguousarray(data, dtype=DTYPE)
    if v.ndim != 1 or v.size == 0:
        raise ShapeError(f"expected a non-empty 1-D vector, got shape {v.shape}")
    if check_finite and not np.isfinite(v).all():
        raise NonFiniteError("vector contains NaN or Inf")
    return v


def as_matrix(data, *, check_finite: bool = True) -> np.ndarray:
    m = np.ascontiguousarray(data, dtype=DTYPE)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    if check_finite and not np.isfinite(m).all():
        raise NonFiniteError("matrix contains NaN or Inf")
    return m


def check_theta(theta: float) -> float:
    theta = float(theta)
    if not theta >= 0.0 or theta == float("inf"):
        raise ValueError(f"activation threshold must be finite and >= 0, got {theta}")
    # stored as f32 so model files round-trip exactly
    return float(DTYPE(theta))


@njit(inline="always")
def row_dot(W, i, x):
    # strictly sequential float32 accumulation; every GEMV path goes through here
    acc = np.float32(0.0)
    for j in range(x.shape[0]):
        acc += W[i, j] * x[j]
    return acc


@njit(parallel=True, cache=True)
def _dense_gemv_kernel(W, x, out):
    for i in prange(W.shape[0]):
        out[i] = row_dot(W, i, x)


def dense_gemv(W: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``out[i] = <W[i], x>``, accumulated left to right over the columns.

    The accumulation order is fixed so the sparse kernels can be compared
    against this one bit for bit.
    """
    if W.ndim != 2 or x.ndim != 1 or x.shape[0] != W.shape[1]:
        raise ShapeError(f"cannot multiply {W.shape} matrix by {x.shape} vector")
    W = np.ascontiguousarray(W, dtype=DTYPE)
    x = np.ascontiguousarray(x, dtype=DTYPE)
    out = np.empty(W.shape[0], dtype=DTYPE)
    _dense_gemv_kernel(W, x, out)
    return out


def relu_theta(v: np.ndarray, theta: float = 0.0) -> np.ndarray:
    """FATReLU: keep ``v[i]`` if it is strictly above ``theta``, else 0."""
    v = np.asarray(v, dtype=DTYPE)
    return np.where(v > DTYPE(theta), v, DTYPE(0.0)).astype(DTYPE, copy=False)


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.shape != b.shape:
        raise ShapeError(f"hadamard of mismatched shapes {a.shape} and {b.shape}")
    return a * b
