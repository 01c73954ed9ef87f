import numpy as np
import pytest

from agebranch import build_grid, make_spec, total_population
from agebranch.errors import CoefficientBoundError
from agebranch.model import ModelSpec, family_parameters


def test_spatial_nodes_three_point():
    spec = make_spec("constant", n_x=3, n_a=2)
    g = build_grid(spec)
    assert np.allclose(g.x_nodes, [0.0, 0.5, 1.0])
    assert g.dx == 0.5


def test_age_nodes_and_trapezoid_weights():
    spec = make_spec("constant", n_x=3, n_a=2, a_max=1.0)
    g = build_grid(spec)
    assert np.allclose(g.a_nodes, [0.0, 0.5, 1.0])
    assert np.allclose(g.w_a, [0.25, 0.5, 0.25])


@pytest.mark.parametrize("bad", [
    {"n_a": 1},
    {"n_x": 2},
    {"a_max": 0.0},
    {"a_max": -1.0},
    {"x_min": 1.0, "x_max": 1.0},
    {"x_min": 2.0, "x_max": 1.0},
])
def test_build_grid_rejects_bad_resolutions(bad):
    spec = make_spec("constant", **bad)
    with pytest.raises(ValueError):
        build_grid(spec)


@pytest.mark.parametrize("n_a,a_max", [(2, 1.0), (7, 2.5), (100, 0.3)])
def test_age_weights_reproduce_length(n_a, a_max):
    g = build_grid(make_spec("constant", n_a=n_a, a_max=a_max))
    assert abs(g.w_a.sum() - a_max) <= 2e-14 * max(1.0, a_max)


@pytest.mark.parametrize("n_x,x_max", [(3, 1.0), (17, 4.0)])
def test_spatial_weights_reproduce_length(n_x, x_max):
    g = build_grid(make_spec("constant", n_x=n_x, x_max=x_max))
    assert abs(g.w_x.sum() - x_max) <= 2e-14 * max(1.0, x_max)


def test_total_population_zero_and_constant():
    spec = make_spec("constant", a_max=2.0, n_a=8)
    g = build_grid(spec)
    zero = np.zeros((g.n_a + 1, g.n_x))
    assert np.all(total_population(zero, g) == 0.0)
    ones = np.ones((g.n_a + 1, g.n_x))
    assert np.allclose(total_population(ones, g), 2.0, rtol=1e-14)


def test_total_population_exact_for_linear_integrand():
    g = build_grid(make_spec("constant", a_max=1.0, n_a=5))
    u = np.broadcast_to(g.a_nodes[:, None], (g.n_a + 1, g.n_x)).copy()
    assert np.allclose(total_population(u, g), 0.5, rtol=1e-14)


def test_total_population_linear_and_monotone(rng, constant_grid):
    g = constant_grid
    u1 = rng.random((g.n_a + 1, g.n_x))
    u2 = rng.random((g.n_a + 1, g.n_x))
    lhs = total_population(0.7 * u1 + 1.3 * u2, g)
    rhs = 0.7 * total_population(u1, g) + 1.3 * total_population(u2, g)
    assert np.allclose(lhs, rhs, rtol=1e-13)
    assert np.all(total_population(u1, g) >= 0.0)


def test_total_population_shape_mismatch(constant_grid):
    with pytest.raises(ValueError):
        total_population(np.zeros((3, 4)), constant_grid)


def test_diffusivity_bound_is_enforced():
    spec = ModelSpec(
        d=lambda z: 1.0 - z,  # dips below the bound for z > 0.5
        mu=lambda z, a: np.zeros_like(z),
        b=lambda z, a: np.ones_like(z),
        d_lower=0.5,
    )
    assert np.all(spec.eval_d(np.zeros(4)) == 1.0)
    with pytest.raises(CoefficientBoundError):
        spec.eval_d(np.full(4, 0.9))


def test_negative_rates_are_hard_errors():
    spec = ModelSpec(
        d=lambda z: np.ones_like(z),
        mu=lambda z, a: -np.ones_like(z),
        b=lambda z, a: z - 1.0,
        d_lower=0.1,
    )
    with pytest.raises(CoefficientBoundError):
        spec.eval_mu(np.zeros(3), 0.0)
    with pytest.raises(CoefficientBoundError):
        spec.eval_b(np.zeros(3), 0.0)


def test_derivative_fallback_is_flagged_and_accurate():
    spec = ModelSpec(
        d=lambda z: 1.0 + z**2,
        mu=lambda z, a: np.full_like(z, 1.0),
        b=lambda z, a: np.ones_like(z),
        d_lower=1.0,
    )
    assert spec.derivatives_from_fd
    z = np.linspace(0.0, 2.0, 9)
    assert np.allclose(spec.eval_d_prime(z), 2.0 * z, atol=1e-8)

    family = make_spec("density_diffusion")
    assert not family.derivatives_from_fd


def test_family_parameter_validation():
    with pytest.raises(ValueError):
        family_parameters("lotka", {})
    with pytest.raises(ValueError):
        family_parameters("constant", {"kappa": 1.0})
    merged = family_parameters("logistic_death", {"kappa": 2.5})
    assert merged["kappa"] == 2.5 and merged["mu0"] == 1.0


def test_make_spec_passes_overrides_through():
    spec = make_spec("constant", n_x=7, newton_tol=1e-8, lambda_max=3.0)
    assert spec.n_x == 7
    assert spec.newton_tol == 1e-8
    assert spec.lambda_max == 3.0
    assert spec.family == "constant"
