import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def clustered(n, d, n_clusters, seed=0, spread=0.5, query_noise=0.3, n_queries=50):
    """Gaussian clusters plus noisy copies of database rows as queries."""
    r = np.random.default_rng(seed)
    centers = r.standard_normal((n_clusters, d)) * 2.0
    X = centers[r.integers(0, n_clusters, n)] + r.standard_normal((n, d)) * spread
    Q = X[r.integers(0, n, n_queries)] + r.standard_normal((n_queries, d)) * query_noise
    return X, Q


@pytest.fixture(scope="session")
def small_clustered():
    return clustered(3000, 24, 30, seed=7)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: float(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
