import numpy as np
import pytest

from mvts import kernels


@pytest.fixture(params=sorted(kernels.available_backends()))
def backend(request):
    """Each kernel implementation that is importable in this environment."""
    return kernels.available_backends()[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_columns(rng, n, h, t):
    """``(n, h, t)`` array whose columns are random probability vectors."""
    p = rng.random((n, h, t))
    return p / p.sum(axis=1, keepdims=True)


def random_onehot(rng, n, h, t):
    idx = rng.integers(0, h, size=(n, t))
    out = np.zeros((n, h, t))
    ii, kk = np.meshgrid(np.arange(n), np.arange(t), indexing="ij")
    out[ii, idx, kk] = 1.0
    return out


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
