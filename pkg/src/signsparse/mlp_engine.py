"""Gate-based MLP forward passes, dense and sign-predicted sparse.

    y = (relu_theta(x W_gate) * (x W_up)) W_down^T

The sparse path predicts which gate rows end up zero, skips them in the
gate projection, then widens the skip set with the zeros it actually
observes in ``h1`` (before the up projection) and in ``h3`` (before the
down projection).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import predictor
from .predictor import AlphaSchedule
from .signpack import SignPackedMatrix, pack_signs_matrix, pack_signs_vector
from .sparse_linear import MacCounter, accumulate_down, sparse_gemv_rows
from .tensor_core import DTYPE, ShapeError, as_matrix, check_theta, dense_gemv, hadamard, relu_theta


@dataclass(frozen=True)
class MlpLayerWeights:
    gate: np.ndarray    # (k, d)
    up: np.ndarray      # (k, d)
    down_t: np.ndarray  # (k, d), rows of W_down^T
    gate_signs: SignPackedMatrix
    theta: float = 0.0

    @classmethod
    def from_matrices(cls, gate, up, down_t, theta: float = 0.0) -> "MlpLayerWeights":
        gate, up, down_t = as_matrix(gate), as_matrix(up), as_matrix(down_t)
        if not gate.shape == up.shape == down_t.shape:
            raise ShapeError(f"projection shapes differ: {gate.shape}, {up.shape}, {down_t.shape}")
        return cls(gate, up, down_t, pack_signs_matrix(gate), check_theta(theta))

    @property
    def k(self) -> int:
        return self.gate.shape[0]

    @property
    def d(self) -> int:
        return self.gate.shape[1]


@dataclass(frozen=True)
class MlpStack:
    layers: list[MlpLayerWeights]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a stack needs at least one layer")
        dims = {(l.k, l.d) for l in self.layers}
        if len(dims) != 1:
            raise ShapeError(f"layers disagree on (k, d): {sorted(dims)}")
        if len({l.theta for l in self.layers}) != 1:
            raise ValueError("layers disagree on theta")

    @property
    def d(self) -> int:
        return self.layers[0].d

    @property
    def k(self) -> int:
        return self.layers[0].k

    @property
    def theta(self) -> float:
        return self.layers[0].theta

    def __len__(self):
        return len(self.layers)


@dataclass
class LayerTrace:
    predicted: np.ndarray
    h1_actual_zero: np.ndarray
    h3_zero: np.ndarray
    truth: np.ndarray | None = None
    n_neg_histogram: np.ndarray | None = None
    h1: np.ndarray | None = None
    h2: np.ndarray | None = None
    h3: np.ndarray | None = None

    @property
    def predicted_sparsity(self) -> float:
        return float(self.predicted.mean())

    @property
    def h1_sparsity(self) -> float:
        return float(self.h1_actual_zero.mean())

    @property
    def h3_sparsity(self) -> float:
        return float(self.h3_zero.mean())


def _check_input(layer: MlpLayerWeights, x: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=DTYPE)
    if x.ndim != 1 or x.shape[0] != layer.d:
        raise ShapeError(f"input of shape {x.shape} does not match layer d={layer.d}")
    return x


def ground_truth_mask(layer: MlpLayerWeights, x: np.ndarray) -> np.ndarray:
    """True where the dense gate output is at or below theta (so h1 is 0)."""
    x = _check_input(layer, x)
    return dense_gemv(layer.gate, x) <= DTYPE(layer.theta)


def mlp_forward_dense(layer: MlpLayerWeights, x: np.ndarray, *, keep_vectors: bool = False,
                      counter: MacCounter | None = None) -> tuple[np.ndarray, LayerTrace]:
    x = _check_input(layer, x)
    no_skip = np.zeros(layer.k, dtype=np.bool_)
    if counter is None:
        gate_out = dense_gemv(layer.gate, x)
        h2 = dense_gemv(layer.up, x)
    else:
        gate_out = sparse_gemv_rows(layer.gate, x, no_skip, counter)
        h2 = sparse_gemv_rows(layer.up, x, no_skip, counter)
    h1 = relu_theta(gate_out, layer.theta)
    h3 = hadamard(h1, h2)
    y = accumulate_down(layer.down_t, h3, no_skip, counter)
    truth = gate_out <= DTYPE(layer.theta)
    trace = LayerTrace(predicted=no_skip, h1_actual_zero=h1 == 0, h3_zero=h3 == 0, truth=truth)
    if keep_vectors:
        trace.h1, trace.h2, trace.h3 = h1, h2, h3
    return y, trace


def mlp_forward_sparse(layer: MlpLayerWeights, x: np.ndarray, alpha_x100: int,
                       xsigns_scratch: np.ndarray | None = None, *, with_truth: bool = False,
                       keep_vectors: bool = False, counter: MacCounter | None = None,
                       predicted: np.ndarray | None = None) -> tuple[np.ndarray, LayerTrace]:
    """One MLP block with predicted + actual sparsity.

    ``predicted`` overrides the sign predictor with a caller-supplied mask
    (forced-mask experiments). ``with_truth`` recomputes the dense gate
    projection for the trace and should stay off when timing.
    """
    x = _check_input(layer, x)
    counts = None
    if predicted is None:
        xsigns = pack_signs_vector(x, out=xsigns_scratch)
        counts = predictor.count_negatives_rows(layer.gate_signs, xsigns)
        predicted = predictor.skip_from_counts(counts, layer.d, alpha_x100)
    else:
        predicted = np.ascontiguousarray(predicted, dtype=np.bool_)
        if predicted.shape != (layer.k,):
            raise ShapeError(f"forced mask of shape {predicted.shape} does not match k={layer.k}")

    h1 = relu_theta(sparse_gemv_rows(layer.gate, x, predicted, counter), layer.theta)
    h1_zero = h1 == 0
    mask2 = predicted | h1_zero
    h2 = sparse_gemv_rows(layer.up, x, mask2, counter)
    h3 = hadamard(h1, h2)
    h3_zero = h3 == 0
    mask4 = mask2 | h3_zero
    y = accumulate_down(layer.down_t, h3, mask4, counter)

    trace = LayerTrace(predicted=predicted, h1_actual_zero=h1_zero, h3_zero=h3_zero)
    if counts is not None:
        trace.n_neg_histogram = np.bincount(counts, minlength=layer.d + 1)
    if with_truth:
        trace.truth = ground_truth_mask(layer, x)
    if keep_vectors:
        trace.h1, trace.h2, trace.h3 = h1, h2, h3
    return y, trace


def rms_normalize(y: np.ndarray) -> np.ndarray:
    """Scale to unit root-mean-square; an all-zero vector passes through."""
    rms = float(np.sqrt(np.mean(np.square(y, dtype=np.float64))))
    if rms == 0.0:
        return y
    return (y.astype(np.float64) / rms).astype(DTYPE)


def stack_forward(model: MlpStack, x: np.ndarray, mode: str = "dense",
                  schedule: AlphaSchedule | None = None, *, with_truth: bool = False,
                  keep_vectors: bool = False,
                  counter: MacCounter | None = None) -> tuple[np.ndarray, list[LayerTrace]]:
    """Run ``x`` through every layer, RMS-normalising between layers.

    There is no residual path; the final layer's output is returned as is.
    """
    if mode not in ("dense", "sparse"):
        raise ValueError(f"mode must be 'dense' or 'sparse', got {mode!r}")
    if mode == "sparse":
        if schedule is None or len(schedule) != len(model.layers):
            got = None if schedule is None else len(schedule)
            raise ShapeError(f"alpha schedule length {got} does not match {len(model.layers)} layers")
    scratch = np.empty(model.layers[0].gate_signs.words_per_row, dtype=np.uint32)
    traces = []
    h = x
    for li, layer in enumerate(model.layers):
        if li:
            h = rms_normalize(h)
        if mode == "dense":
            h, tr = mlp_forward_dense(layer, h, keep_vectors=keep_vectors, counter=counter)
        else:
            h, tr = mlp_forward_sparse(layer, h, schedule.per_layer[li], scratch,
                                       with_truth=with_truth, keep_vectors=keep_vectors,
                                       counter=counter)
        traces.append(tr)
    return h, traces


def dense_layer_inputs(model: MlpStack, x: np.ndarray) -> list[np.ndarray]:
    """Input seen by each layer when the whole stack runs dense."""
    inputs = []
    h = x
    for li, layer in enumerate(model.layers):
        if li:
            h = rms_normalize(h)
        inputs.append(h)
        h, _ = mlp_forward_dense(layer, h)
    return inputs
