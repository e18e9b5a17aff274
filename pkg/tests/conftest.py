import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from deepin.model import DeepInModel  # noqa: E402
from deepin.network import RepuNetwork  # noqa: E402
from deepin.numerics import make_rng  # noqa: E402


def random_model(seed, d=4, hidden=(5,), rows=None, task="regression", scale=0.5):
    rng = make_rng(seed)
    rows = rows or d
    net = RepuNetwork.initialize((rows,) + tuple(hidden) + (1,), rng)
    net.theta[:] += 0.1 * rng.standard_normal(net.theta.size)
    B = scale * rng.standard_normal((rows, d))
    return DeepInModel(B, net, task)


@pytest.fixture
def rng():
    return make_rng(20240601)


@pytest.fixture
def small_model():
    return random_model(3)


def relerr(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))))


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
