import numpy as np
import pytest

from homsparse.space import DyadicTree, FiniteSpace, dyadic_metric, line_space


@pytest.fixture
def uniform_line16():
    return line_space(np.arange(16.0))


@pytest.fixture
def binary8():
    """Uniform full binary tree with 8 leaves, as a tree-metric space."""
    tree = DyadicTree.full_binary(3)
    return dyadic_metric(tree, np.ones(8))


def random_space(rng: np.random.Generator, n: int) -> FiniteSpace:
    """Planar point cloud with random masses; duplicate points nudged apart."""
    pts = rng.uniform(0, 10, size=(n, 2))
    d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    iu = np.triu_indices(n, k=1)
    dup = d[iu] == 0
    if dup.any():
        d[iu] = np.where(dup, 1e-6, d[iu])
        d.T[iu] = d[iu]
    masses = rng.uniform(0.5, 2.0, size=n)
    return FiniteSpace(masses, d)
