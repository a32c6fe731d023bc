"""Sign-bit activation sparsity prediction and row-skipping MLP inference on CPU."""

import numba as _numba

# prefer OpenMP (safe for concurrent callers); TBB is only tried last
_numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

from .predictor import ALPHA_NEVER_SKIP_BY_MAJORITY, AlphaSchedule, parse_alpha  # noqa: E402
from .tensor_core import NonFiniteError, ShapeError  # noqa: E402

__all__ = ["ALPHA_NEVER_SKIP_BY_MAJORITY", "AlphaSchedule", "parse_alpha", "ShapeError",
           "NonFiniteError", "set_threads"]


def set_threads(n: int) -> int:
    """Set kernel thread count, clamped to the pool size numba was started with."""
    n = max(1, min(int(n), _numba.config.NUMBA_NUM_THREADS))
    _numba.set_num_threads(n)
    return n
