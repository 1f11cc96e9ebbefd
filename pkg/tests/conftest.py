import numpy as np
import pytest

from proclab import (
    CoefficientSet,
    TimeGrid,
    constant_ensemble,
    constant_family,
    gaussian_noise,
    random_ensemble,
    tree_noise,
)


@pytest.fixture
def grid():
    return TimeGrid(0.0, 1.0, 8)


@pytest.fixture
def small_tree(grid):
    return tree_noise(grid, 1, 0)


def zero_control(k_from, k_to):
    return constant_family((0.0,), k_from, k_to).members[0]


def custom_coeffs(b=None, sigma=None, f=None, g=None, dim=1, **meta):
    """Coefficient set with simple defaults for targeted dynamics tests."""
    b = b or (lambda t, paths, a, law, ctrl: np.zeros((paths.shape[0], dim)))
    sigma = sigma or (lambda t, paths, a, law, ctrl: np.zeros((paths.shape[0], dim, dim)))
    f = f or (lambda t, law, ctrl: 0.0)
    g = g or (lambda law: 0.0)
    defaults = dict(L=1.0, beta=1.0, C0=1.0, p=2.0)
    defaults.update(meta)
    return CoefficientSet(b, sigma, f, g, **defaults)
