import warnings

import numpy as np
import pytest

warnings.filterwarnings("ignore", message=".*TBB.*")

from signsparse.mlp_engine import MlpLayerWeights, MlpStack  # noqa: E402

_ACCEPTANCE = []


def record_criterion(number, name, passed, detail=""):
    _ACCEPTANCE.append((number, name, bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(_ACCEPTANCE):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number:>2}. {name}  {detail}")


@pytest.fixture
def worked_layer():
    """d=2, k=2 layer used throughout the hand-worked examples."""
    return MlpLayerWeights.from_matrices(
        gate=[[1, 1], [-1, -1]],
        up=[[2, 0], [1, 1]],
        down_t=[[1, 0], [0, 1]],
        theta=0.0,
    )


@pytest.fixture
def worked_x():
    return np.array([1, 2], dtype=np.float32)


def random_stack(rng, layers, d, k, theta=0.0):
    out = []
    for _ in range(layers):
        mats = [rng.standard_normal((k, d), dtype=np.float32) for _ in range(3)]
        out.append(MlpLayerWeights.from_matrices(*mats, theta=theta))
    return MlpStack(out)


@pytest.fixture
def rng():
    return np.random.default_rng(20241016)
