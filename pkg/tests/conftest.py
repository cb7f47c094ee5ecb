import numpy as np
import pytest

from gdmcf.graph import InteractionMatrix


def random_graph(rng, m, n, density=0.3, ensure_row=True) -> InteractionMatrix:
    dense = rng.random((m, n)) < density
    if ensure_row and n:
        dense[np.arange(m), rng.integers(0, n, m)] = True
    return InteractionMatrix(dense.astype(float))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def make_graph():
    return random_graph


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
