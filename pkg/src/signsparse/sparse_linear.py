"""Row-skipping GEMV kernels.

``sparse_gemv_rows`` handles the gate and up projections; ``accumulate_down``
handles the down projection stored transposed (``k`` rows of length ``d``),
so a skipped hidden unit drops a whole contiguous row in every projection.
Skipped rows are never read.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

from .tensor_core import DTYPE, ShapeError, row_dot

DOWN_COL_BLOCK = 512


class MacCounter:
    """Tallies multiply-accumulates actually executed by the instrumented kernels."""

    def __init__(self):
        self.macs = 0

    def add(self, n):
        self.macs += int(n)

    def reset(self):
        self.macs = 0


@njit(parallel=True, cache=True)
def _sparse_gemv_kernel(W, x, skip, out):
    for i in prange(W.shape[0]):
        if skip[i]:
            out[i] = 0.0
        else:
            out[i] = row_dot(W, i, x)


@njit(parallel=True, cache=True)
def _sparse_gemv_counting_kernel(W, x, skip, out, macs):
    d = x.shape[0]
    for i in prange(W.shape[0]):
        if skip[i]:
            out[i] = 0.0
            macs[i] = 0
        else:
            acc = np.float32(0.0)
            n = 0
            for j in range(d):
                acc += W[i, j] * x[j]
                n += 1
            out[i] = acc
            macs[i] = n


@njit(parallel=True, cache=True)
def _accumulate_down_kernel(Wdt, h3, skip, out, block):
    k, d = Wdt.shape
    nblocks = (d + block - 1) // block
    for b in prange(nblocks):
        j0 = b * block
        j1 = min(j0 + block, d)
        for j in range(j0, j1):
            out[j] = 0.0
        for i in range(k):
            if skip[i]:
                continue
            a = h3[i]
            for j in range(j0, j1):
                out[j] += a * Wdt[i, j]


@njit(parallel=True, cache=True)
def _accumulate_down_counting_kernel(Wdt, h3, skip, out, block, macs):
    k, d = Wdt.shape
    nblocks = (d + block - 1) // block
    for b in prange(nblocks):
        j0 = b * block
        j1 = min(j0 + block, d)
        n = 0
        for j in range(j0, j1):
            out[j] = 0.0
        for i in range(k):
            if skip[i]:
                continue
            a = h3[i]
            for j in range(j0, j1):
                out[j] += a * Wdt[i, j]
                n += 1
        macs[b] = n


def _check_mask(skip, n, what):
    skip = np.ascontiguousarray(skip, dtype=np.bool_)
    if skip.ndim != 1 or skip.shape[0] != n:
        raise ShapeError(f"skip mask of length {skip.shape} does not match {n} {what}")
    return skip


def sparse_gemv_rows(W: np.ndarray, x: np.ndarray, skip: np.ndarray,
                     counter: MacCounter | None = None) -> np.ndarray:
    """Dense GEMV with ``out[i] = 0`` for every skipped row.

    Non-skipped rows are bit-identical to :func:`~signsparse.tensor_core.dense_gemv`.
    """
    if W.ndim != 2 or x.ndim != 1 or x.shape[0] != W.shape[1]:
        raise ShapeError(f"cannot multiply {W.shape} matrix by {x.shape} vector")
    skip = _check_mask(skip, W.shape[0], "rows")
    W = np.ascontiguousarray(W, dtype=DTYPE)
    x = np.ascontiguousarray(x, dtype=DTYPE)
    out = np.empty(W.shape[0], dtype=DTYPE)
    if counter is None:
        _sparse_gemv_kernel(W, x, skip, out)
    else:
        macs = np.zeros(W.shape[0], dtype=np.int64)
        _sparse_gemv_counting_kernel(W, x, skip, out, macs)
        counter.add(macs.sum())
    return out


def accumulate_down(Wdt: np.ndarray, h3: np.ndarray, skip: np.ndarray,
                    counter: MacCounter | None = None) -> np.ndarray:
    """``sum_i h3[i] * Wdt[i]`` over non-skipped rows, in ascending ``i``.

    Each output element sees the same addition order whatever the thread
    count, which makes the result reproducible bit for bit.
    """
    if Wdt.ndim != 2 or h3.ndim != 1 or h3.shape[0] != Wdt.shape[0]:
        raise ShapeError(f"h3 of shape {h3.shape} does not match W_down^T of shape {Wdt.shape}")
    skip = _check_mask(skip, Wdt.shape[0], "rows")
    Wdt = np.ascontiguousarray(Wdt, dtype=DTYPE)
    h3 = np.ascontiguousarray(h3, dtype=DTYPE)
    out = np.empty(Wdt.shape[1], dtype=DTYPE)
    if counter is None:
        _accumulate_down_kernel(Wdt, h3, skip, out, DOWN_COL_BLOCK)
    else:
        nblocks = -(-Wdt.shape[1] // DOWN_COL_BLOCK)
        macs = np.zeros(nblocks, dtype=np.int64)
        _accumulate_down_counting_kernel(Wdt, h3, skip, out, DOWN_COL_BLOCK, macs)
        counter.add(macs.sum())
    return out
