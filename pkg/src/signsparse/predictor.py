"""Training-free activation sparsity prediction from packed sign bits.

For a gate row ``w`` and input ``x`` the XOR of their sign bits marks the
elementwise products that come out negative. With ``N_neg`` such products
and ``N_pos = d - N_neg`` the row is predicted sparse (skipped) when

    alpha * N_pos < N_neg

``alpha`` is carried as an integer scaled by 100, so the test is evaluated
exactly as ``alpha_x100 * N_pos < 100 * N_neg``. Ties are never skipped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .signpack import SignPackedMatrix, SignPackedVector
from .tensor_core import ShapeError

ALPHA_NEVER_SKIP_BY_MAJORITY = 2**32 - 1
ALPHA_ONE = 100


def parse_alpha(text) -> int:
    """Decimal alpha (``"1.03"``, ``1.0``, ``"inf"``) to the x100 fixed-point form."""
    if isinstance(text, str) and text.strip().lower() in ("inf", "infinity", "never"):
        return ALPHA_NEVER_SKIP_BY_MAJORITY
    value = float(text)
    if math.isinf(value) and value > 0:
        return ALPHA_NEVER_SKIP_BY_MAJORITY
    if not math.isfinite(value) or value < 0:
        raise ValueError(f"alpha must be a non-negative number or 'inf', got {text!r}")
    scaled = round(value * 100)
    if scaled >= ALPHA_NEVER_SKIP_BY_MAJORITY:
        return ALPHA_NEVER_SKIP_BY_MAJORITY
    return int(scaled)


def format_alpha(alpha_x100: int) -> str:
    if alpha_x100 == ALPHA_NEVER_SKIP_BY_MAJORITY:
        return "inf"
    return f"{alpha_x100 / 100:.2f}"


@dataclass
class AlphaSchedule:
    per_layer: list[int]
    early_layer_count: int = 0

    @classmethod
    def uniform(cls, alpha_x100: int, layers: int) -> "AlphaSchedule":
        return cls([int(alpha_x100)] * layers, 0)

    def __len__(self):
        return len(self.per_layer)

    def to_dict(self) -> dict:
        return {
            "alpha_x100": list(self.per_layer),
            "alpha": [format_alpha(a) for a in self.per_layer],
            "early_layer_count": self.early_layer_count,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AlphaSchedule":
        return cls([int(a) for a in data["alpha_x100"]], int(data.get("early_layer_count", 0)))


@njit(inline="always")
def _popcount32(v):
    v = v - ((v >> 1) & 0x55555555)
    v = (v & 0x33333333) + ((v >> 2) & 0x33333333)
    v = (v + (v >> 4)) & 0x0F0F0F0F
    return ((v * 0x01010101) & 0xFFFFFFFF) >> 24


@njit(parallel=True, cache=True)
def _count_negatives_kernel(W_words, x_words, tail_mask, counts):
    rows, wpr = W_words.shape
    last = wpr - 1
    for i in prange(rows):
        c = 0
        for w in range(last):
            c += _popcount32(np.int64(W_words[i, w] ^ x_words[w]))
        c += _popcount32(np.int64((W_words[i, last] ^ x_words[last]) & tail_mask))
        counts[i] = c


@njit(parallel=True, cache=True)
def _threshold_kernel(counts, d, alpha_x100, skip):
    for i in prange(counts.shape[0]):
        n_neg = np.int64(counts[i])
        skip[i] = alpha_x100 * (d - n_neg) < 100 * n_neg


def count_negatives(row_words, x_words, tail_mask: int) -> int:
    """Number of sign disagreements between one packed row and the packed input."""
    row_words = np.asarray(row_words, dtype=np.uint32)
    x_words = np.asarray(x_words, dtype=np.uint32)
    if row_words.shape != x_words.shape:
        raise ShapeError(f"word counts differ: {row_words.shape} vs {x_words.shape}")
    xor = row_words ^ x_words
    xor[-1] &= np.uint32(tail_mask)
    return int(np.bitwise_count(xor).sum())


def predict_row(n_neg: int, d: int, alpha_x100: int) -> bool:
    n_pos = d - n_neg
    return alpha_x100 * n_pos < 100 * n_neg


def count_negatives_rows(Wsigns: SignPackedMatrix, xsigns: SignPackedVector) -> np.ndarray:
    """``N_neg`` for every row of ``Wsigns``."""
    if Wsigns.cols != xsigns.len:
        raise ShapeError(f"packed matrix has {Wsigns.cols} columns, input has {xsigns.len}")
    counts = np.empty(Wsigns.rows, dtype=np.int32)
    _count_negatives_kernel(Wsigns.words, xsigns.words, np.uint32(Wsigns.tail_mask), counts)
    return counts


def skip_from_counts(counts: np.ndarray, d: int, alpha_x100: int) -> np.ndarray:
    skip = np.empty(counts.shape[0], dtype=np.bool_)
    _threshold_kernel(counts, np.int64(d), np.int64(alpha_x100), skip)
    return skip


def predict_skip_mask(Wsigns: SignPackedMatrix, xsigns: SignPackedVector, alpha_x100: int) -> np.ndarray:
    """Boolean mask over the rows of ``Wsigns``; True means predicted sparse."""
    counts = count_negatives_rows(Wsigns, xsigns)
    return skip_from_counts(counts, Wsigns.cols, alpha_x100)

