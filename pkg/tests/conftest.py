import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bsar.dgp import BsarDataset, generate_bsar
from bsar.spatial import WeightMatrix, draw_distance_weights

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def ring(n):
    """Cycle graph: every unit has two neighbours, so the normalized W is symmetric."""
    raw = np.zeros((n, n))
    idx = np.arange(n)
    raw[idx, (idx + 1) % n] = raw[(idx + 1) % n, idx] = 1.0
    return WeightMatrix.from_adjacency(raw)


def random_weights(n, rng, d=None):
    W, _, _ = draw_distance_weights(n, d or min(0.6, 2.0 / np.sqrt(n)), rng)
    return W


def directed_weights(n, rng, p=0.3):
    """Asymmetric 0/1 pattern, every row with at least one neighbour."""
    raw = (rng.random((n, n)) < p).astype(float)
    np.fill_diagonal(raw, 0.0)
    for i in np.flatnonzero(raw.sum(axis=1) == 0):
        raw[i, (i + 1) % n] = 1.0
    return WeightMatrix.from_adjacency(raw)


def small_dataset(n=30, rho=0.4, seed=0, beta=(0.5, -0.4)):
    rng = np.random.default_rng(seed)
    W = random_weights(n, rng)
    return generate_bsar(W, beta, rho, rng)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


#: one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
