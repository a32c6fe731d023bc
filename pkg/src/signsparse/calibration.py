"""Alpha sweeps and per-layer alpha selection."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import predictor
from .metrics import l2_error, score_predictor
from .mlp_engine import (MlpStack, dense_layer_inputs, ground_truth_mask, mlp_forward_dense,
                         mlp_forward_sparse)
from .predictor import ALPHA_ONE, AlphaSchedule
from .signpack import pack_signs_vector

__all__ = [
    "DEFAULT_GRID", "DEFAULT_PRECISION_TARGET", "SweepRow", "SweepTable",
    "ground_truth_mask", "sweep_alpha", "select_alpha", "default_early_layer_count",
]

DEFAULT_GRID = (100, 101, 102, 103, 105, 110)
DEFAULT_PRECISION_TARGET = 0.99
SWEEP_COLUMNS = ("layer", "alpha_x100", "precision", "recall", "sparsity", "h3_l2_error")


@dataclass
class SweepRow:
    layer: int
    alpha_x100: int
    precision: float
    recall: float
    sparsity: float
    h3_l2_error: float
    # per-input false positive counts, kept for monotonicity checks
    false_positives: list[int] = field(default_factory=list, repr=False)


@dataclass
class SweepTable:
    grid: list[int]
    layers: int
    rows: list[SweepRow]

    def row(self, layer: int, alpha_x100: int) -> SweepRow:
        for r in self.rows:
            if r.layer == layer and r.alpha_x100 == alpha_x100:
                return r
        raise KeyError((layer, alpha_x100))

    def for_layer(self, layer: int) -> list[SweepRow]:
        return [r for r in self.rows if r.layer == layer]

    def mean_error(self, alpha_x100: int) -> float:
        return float(np.mean([r.h3_l2_error for r in self.rows if r.alpha_x100 == alpha_x100]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in self.rows:
            w.writerow([r.layer, r.alpha_x100, f"{r.precision:.6f}", f"{r.recall:.6f}",
                        f"{r.sparsity:.6f}", f"{r.h3_l2_error:.9g}"])
        return buf.getvalue()


def sweep_alpha(model: MlpStack, inputs, grid=DEFAULT_GRID) -> SweepTable:
    """Mean precision/recall/predicted sparsity/h3 error for every (layer, alpha).

    Each layer is fed the input it would see in a fully dense run, so all
    alphas are compared on identical layer inputs.
    """
    grid = [int(a) for a in grid]
    inputs = [np.asarray(x, dtype=np.float32) for x in inputs]
    if not grid:
        raise ValueError("alpha grid is empty")
    if not inputs:
        raise ValueError("no calibration inputs")

    L, G = len(model.layers), len(grid)
    prec = np.zeros((L, G))
    rec = np.zeros((L, G))
    spars = np.zeros((L, G))
    err = np.zeros((L, G))
    fps = [[[] for _ in range(G)] for _ in range(L)]

    for x in inputs:
        for li, h in enumerate(dense_layer_inputs(model, x)):
            layer = model.layers[li]
            _, dense_tr = mlp_forward_dense(layer, h, keep_vectors=True)
            truth = ground_truth_mask(layer, h)
            counts = predictor.count_negatives_rows(layer.gate_signs, pack_signs_vector(h))
            for gi, alpha in enumerate(grid):
                mask = predictor.skip_from_counts(counts, layer.d, alpha)
                _, tr = mlp_forward_sparse(layer, h, alpha, predicted=mask, keep_vectors=True)
                score = score_predictor(mask, truth)
                prec[li, gi] += score.precision
                rec[li, gi] += score.recall
                spars[li, gi] += mask.mean()
                err[li, gi] += l2_error(tr.h3, dense_tr.h3)
                fps[li][gi].append(score.false_positive)

    n = len(inputs)
    rows = [
        SweepRow(li, grid[gi], prec[li, gi] / n, rec[li, gi] / n, spars[li, gi] / n,
                 err[li, gi] / n, fps[li][gi])
        for li in range(L) for gi in range(G)
    ]
    return SweepTable(grid=grid, layers=L, rows=rows)


def default_early_layer_count(layers: int) -> int:
    return (layers + 1) // 2


def select_alpha(table: SweepTable, precision_target: float = DEFAULT_PRECISION_TARGET,
                 early_layer_count: int | None = None) -> AlphaSchedule:
    """Smallest grid alpha reaching ``precision_target`` for each early layer.

    Early layers that never reach the target get the largest grid alpha; all
    later layers get alpha = 1.00.
    """
    if not table.rows:
        raise ValueError("sweep table is empty")
    if list(table.grid) != sorted(table.grid):
        raise ValueError("alpha grid must be sorted ascending")
    if early_layer_count is None:
        early_layer_count = default_early_layer_count(table.layers)
    early_layer_count = max(0, min(early_layer_count, table.layers))

    per_layer = []
    for li in range(table.layers):
        if li >= early_layer_count:
            per_layer.append(ALPHA_ONE)
            continue
        by_alpha = {r.alpha_x100: r.precision for r in table.for_layer(li)}
        chosen = next((a for a in table.grid if by_alpha[a] >= precision_target), table.grid[-1])
        per_layer.append(chosen)
    return AlphaSchedule(per_layer, early_layer_count)
