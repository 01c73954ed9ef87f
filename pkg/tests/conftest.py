import numpy as np
import pytest

from agebranch import build_grid, make_spec


@pytest.fixture
def constant_spec():
    return make_spec("constant", {"d0": 1.0, "mu0": 1.0, "b0": 1.0}, n_x=12, n_a=40)


@pytest.fixture
def constant_grid(constant_spec):
    return build_grid(constant_spec)


@pytest.fixture
def logistic_spec():
    return make_spec("logistic_death", {"d0": 1.0, "mu0": 1.0, "b0": 1.0, "kappa": 1.0},
                     n_x=12, n_a=40)


@pytest.fixture
def logistic_grid(logistic_spec):
    return build_grid(logistic_spec)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
