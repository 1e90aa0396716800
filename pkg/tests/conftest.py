import numpy as np
import pytest

from gyrognn import graphdata

KAPPAS = (-0.5, -1.0, -2.0)


def random_ball_points(rng, n, d, k, max_frac=0.9):
    """n points with norms uniform in [0, max_frac * ball radius)."""
    c = abs(k)
    dirs = rng.normal(size=(n, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = rng.uniform(0.0, max_frac / np.sqrt(c), size=(n, 1))
    return dirs * radii


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def cora():
    return graphdata.load_dataset("data/cora")


@pytest.fixture(scope="session")
def airport():
    return graphdata.load_dataset("data/airport")


def small_graph(rng, n=8, d_f=6, classes=3, p=0.4):
    """Random connected-ish test graph with features and labels."""
    raw = rng.integers(0, n, size=(max(2 * n, 12), 2))
    edges = graphdata.dedup_edges(raw)
    X = rng.uniform(0.0, 1.0, size=(n, d_f))
    y = rng.integers(0, classes, size=n)
    return graphdata.Graph(n, edges, X, y)
