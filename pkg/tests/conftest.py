import numpy as np
import pytest

from srlite.tensor import Tensor

SEEDS = [0, 1, 2, 3, 4]


def dt(arr, grad=True, dtype=np.float64):
    """Tracked tensor in the given precision."""
    return Tensor(np.asarray(arr, dtype=dtype), requires_grad=grad)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[key])
