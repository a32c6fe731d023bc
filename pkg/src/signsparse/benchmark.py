"""Warmup + median wall-clock timing of dense vs row-skipping GEMV."""

from __future__ import annotations

import os
import platform
import statistics
import time

import numba
import numpy as np

from .sparse_linear import sparse_gemv_rows
from .tensor_core import DTYPE, dense_gemv


def time_median(fn, *, warmup: int = 3, repeats: int = 15) -> float:
    """Median seconds per call of ``fn()`` after ``warmup`` untimed calls."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def forced_mask(k: int, skip_ratio: float, seed: int) -> np.ndarray:
    """Mask with exactly ``round(skip_ratio * k)`` skipped rows at seeded positions."""
    if not 0.0 <= skip_ratio <= 1.0:
        raise ValueError("skip ratio must lie in [0, 1]")
    rng = np.random.Generator(np.random.Philox(seed))
    mask = np.zeros(k, dtype=np.bool_)
    mask[rng.permutation(k)[: int(round(skip_ratio * k))]] = True
    return mask


def machine_description() -> dict:
    return {
        "platform": platform.platform(),
        "machine": platform.machine(),
        "processor": platform.processor() or "unknown",
        "python": platform.python_version(),
        "numpy": np.__version__,
        "numba": numba.__version__,
        "cpu_count": os.cpu_count(),
        "threads": numba.get_num_threads(),
        "threading_layer": _threading_layer(),
    }


def _threading_layer():
    try:
        return numba.threading_layer()
    except ValueError:
        return "not initialised"


def gemv_timing(d: int, k: int, skip_ratio: float, seed: int, *, warmup: int = 3,
                repeats: int = 15, W: np.ndarray | None = None) -> dict:
    """Median dense and forced-mask sparse GEMV times on a random ``k x d`` matrix."""
    rng = np.random.Generator(np.random.Philox(seed))
    if W is None:
        W = rng.standard_normal((k, d), dtype=DTYPE)
    x = rng.standard_normal(d, dtype=DTYPE)
    mask = forced_mask(k, skip_ratio, seed)
    dense_s = time_median(lambda: dense_gemv(W, x), warmup=warmup, repeats=repeats)
    sparse_s = time_median(lambda: sparse_gemv_rows(W, x, mask), warmup=warmup, repeats=repeats)
    return {
        "d": d,
        "k": k,
        "skip_ratio": float(mask.mean()),
        "warmup": warmup,
        "repeats": repeats,
        "dense_median_s": dense_s,
        "sparse_median_s": sparse_s,
        "sparse_over_dense": sparse_s / dense_s,
        "machine": machine_description(),
    }
