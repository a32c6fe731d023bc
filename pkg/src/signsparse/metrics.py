"""Predictor scores, op/memory calculators and error norms.

"Positive" everywhere means sparse, i.e. a skipped row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .signpack import words_per_row
from .tensor_core import ShapeError

MIB = 2**20


@dataclass(frozen=True)
class PredictorScore:
    true_positive: int
    false_positive: int
    false_negative: int
    true_negative: int

    @property
    def precision(self) -> float:
        denom = self.true_positive + self.false_positive
        return 1.0 if denom == 0 else self.true_positive / denom

    @property
    def recall(self) -> float:
        denom = self.true_positive + self.false_negative
        return 1.0 if denom == 0 else self.true_positive / denom

    @property
    def total(self) -> int:
        return self.true_positive + self.false_positive + self.false_negative + self.true_negative


def score_predictor(predicted: np.ndarray, truth: np.ndarray) -> PredictorScore:
    predicted = np.asarray(predicted, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if predicted.shape != truth.shape:
        raise ShapeError(f"mask lengths differ: {predicted.shape} vs {truth.shape}")
    tp = int(np.count_nonzero(predicted & truth))
    fp = int(np.count_nonzero(predicted & ~truth))
    fn = int(np.count_nonzero(~predicted & truth))
    tn = int(np.count_nonzero(~predicted & ~truth))
    return PredictorScore(tp, fp, fn, tn)


@dataclass(frozen=True)
class OpCountReport:
    predictor_word_ops: int
    dense_mlp_macs: int
    sparse_mlp_macs: int
    comparator_predictor_macs: int


def op_counts(d: int, k: int, sparsity: float = 0.0, rank: int = 1024) -> OpCountReport:
    """Per-layer operation counts.

    The sign predictor does one XOR+popcount per packed word of W_gate; the
    comparator is a rank-``rank`` two-layer predictor (``d*rank + rank*k``
    multiplies). Sparse MLP MACs round half away from zero.
    """
    if not 0.0 <= sparsity <= 1.0:
        raise ValueError(f"sparsity must lie in [0, 1], got {sparsity}")
    dense = 3 * d * k
    return OpCountReport(
        predictor_word_ops=k * words_per_row(d),
        dense_mlp_macs=dense,
        sparse_mlp_macs=int(math.floor(dense * (1.0 - sparsity) + 0.5)),
        comparator_predictor_macs=d * rank + rank * k,
    )


def signpack_memory(d: int, k: int, layers: int) -> tuple[int, float]:
    """Bytes (and MiB) of packed gate sign words for a whole model."""
    if d < 1 or k < 1 or layers < 1:
        raise ValueError("dimensions must be positive")
    nbytes = k * words_per_row(d) * 4 * layers
    return nbytes, nbytes / MIB


def comparator_memory(d: int, k: int, layers: int, rank: int = 1024,
                      bytes_per_weight: int = 2) -> tuple[int, float]:
    """Bytes (and MiB) of a rank-``rank`` fp16 low-rank predictor for every layer."""
    nbytes = (d * rank + rank * k) * bytes_per_weight * layers
    return nbytes, nbytes / MIB


def l2_error(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"vector lengths differ: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def sign_agreement(predicted: np.ndarray, truth: np.ndarray) -> float:
    """Fraction of rows where the prediction matches ground truth."""
    predicted = np.asarray(predicted, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if predicted.shape != truth.shape:
        raise ShapeError(f"mask lengths differ: {predicted.shape} vs {truth.shape}")
    return float(np.mean(predicted == truth))
