import numpy as np
import pytest

from agebranch import (
    AffineConstraint,
    ContinuationParams,
    branch_invariant_check,
    build_grid,
    continue_branch,
    field_norm,
    full_residual,
    jacobian,
    make_spec,
    newton_correct,
    next_generation_operator,
    quasilinear_march,
    reduced_residual,
    total_population,
    weighted_inner,
)
from agebranch.errors import SingularSystemError
from agebranch.operators import evolve
from agebranch.oracles import equilibrium_intensity, homogeneous_profile, march_population
from agebranch.solver import BranchPoint, _march_info
from agebranch.spectral import bifurcation_point


@pytest.fixture(scope="module")
def logistic():
    spec = make_spec("logistic_death", n_x=10, n_a=30)
    g = build_grid(spec)
    return spec, g


@pytest.fixture(scope="module")
def logistic_branch(logistic):
    spec, g = logistic
    lam0 = bifurcation_point(spec, g).lambda0
    params = ContinuationParams.from_spec(
        spec, lambda_max=1.8 * lam0, ds0=0.1, ds_max=0.4, max_points=40)
    return continue_branch(spec, g, params)


# -- quasilinear march ---------------------------------------------------------

def test_zero_trace_is_fixed_point_in_one_iteration(logistic):
    spec, g = logistic
    u, iters = _march_info(np.zeros(g.n_x), spec, g)
    assert np.all(u == 0.0)
    assert iters == 1


def test_linear_model_needs_no_self_coupling(constant_spec, constant_grid, rng):
    g = constant_grid
    v = rng.random(g.n_x)
    u, iters = _march_info(v, constant_spec, g)
    assert iters == 1
    assert np.allclose(u, evolve(np.zeros(g.n_x), v, constant_spec, g), rtol=1e-12)


def test_march_matches_scalar_fixed_point(logistic):
    spec, g = logistic
    eps = 0.01
    u = quasilinear_march(np.full(g.n_x, eps), spec, g)
    U_star = march_population(eps, 1.0, 1.0, 1.0, g)
    expected = homogeneous_profile(eps, 1.0 + U_star, g)
    assert np.max(np.abs(u - expected[:, None])) <= 1e-10


def test_march_damps_through_strong_feedback():
    # kappa this large makes the undamped sweep overshoot; the relaxation
    # factor has to back off for the iteration to settle
    spec = make_spec("logistic_death", {"kappa": 30.0}, n_x=6, n_a=20)
    g = build_grid(spec)
    v = np.full(g.n_x, 0.8)
    u = quasilinear_march(v, spec, g)
    U_star = march_population(0.8, 1.0, 30.0, 1.0, g)
    expected = homogeneous_profile(0.8, 1.0 + 30.0 * U_star, g)
    assert np.max(np.abs(u - expected[:, None])) <= 1e-9


def test_march_failure_carries_iterates():
    from agebranch.errors import InnerIterationError

    spec = make_spec("logistic_death", {"kappa": 30.0}, n_x=6, n_a=20, max_inner=3)
    g = build_grid(spec)
    with pytest.raises(InnerIterationError) as err:
        quasilinear_march(np.full(g.n_x, 0.8), spec, g)
    assert err.value.last.shape == (g.n_a + 1, g.n_x)
    assert err.value.previous.shape == (g.n_a + 1, g.n_x)
    assert np.isfinite(err.value.contraction)


# -- residuals ------------------------------------------------------------------

@pytest.mark.parametrize("lam", [-1.0, 0.0, 0.7, 3.0])
def test_trivial_branch_is_exact(logistic, lam):
    spec, g = logistic
    R, u = reduced_residual(lam, np.zeros(g.n_x), spec, g)
    assert np.all(R == 0.0)
    assert np.all(u == 0.0)


def test_eigen_identity_at_the_critical_point(constant_spec, constant_grid):
    g = constant_grid
    bif = bifurcation_point(constant_spec, g)
    R, _ = reduced_residual(bif.lambda0, bif.phi0, constant_spec, g)
    assert np.max(np.abs(R)) <= 2.0 * constant_spec.eigen_tol * np.max(np.abs(bif.phi0))


def test_no_birth_returns_the_trace(logistic, rng):
    spec, g = logistic
    v = rng.random(g.n_x)
    R, _ = reduced_residual(0.0, v, spec, g)
    assert np.allclose(R, v, rtol=1e-13)


def test_full_residual_of_zero_field(logistic):
    spec, g = logistic
    F = full_residual(1.0, np.zeros((g.n_a + 1, g.n_x)), spec, g)
    assert np.all(F == 0.0)


def test_full_residual_linear_reduction(constant_spec, constant_grid, rng):
    # no quasilinear part: the source term vanishes identically
    from agebranch.operators import birth_functional

    g = constant_grid
    u = rng.random((g.n_a + 1, g.n_x))
    lam = 1.2
    U = total_population(u, g)
    newborn = birth_functional(U, u, lam, constant_spec, g)
    expected = u - evolve(np.zeros(g.n_x), newborn, constant_spec, g)
    assert np.allclose(full_residual(lam, u, constant_spec, g), expected, atol=1e-12)


def test_both_characterizations_agree_on_the_branch(logistic, logistic_branch):
    spec, g = logistic
    for pt in logistic_branch.points:
        F = full_residual(pt.lam, pt.u, spec, g)
        assert field_norm(F, g) <= 10.0 * spec.newton_tol


# -- jacobian -------------------------------------------------------------------

def test_jacobian_at_origin_is_eigen_operator(constant_spec, constant_grid):
    g = constant_grid
    lam0 = bifurcation_point(constant_spec, g).lambda0
    Q0 = next_generation_operator(np.zeros((g.n_a + 1, g.n_x)), constant_spec, g)
    expected = np.eye(g.n_x) - lam0 * Q0
    J_fd = jacobian(lam0, np.zeros(g.n_x), constant_spec, g, mode="fd")
    assert np.max(np.abs(J_fd - expected)) <= 1e-8
    J_an = jacobian(lam0, np.zeros(g.n_x), constant_spec, g, mode="analytic")
    assert np.max(np.abs(J_an - expected)) <= 1e-13


def test_jacobian_without_birth_is_identity(constant_spec, constant_grid, rng):
    g = constant_grid
    v = rng.random(g.n_x)
    J = jacobian(0.0, v, constant_spec, g, mode="fd")
    assert np.max(np.abs(J - np.eye(g.n_x))) <= 1e-9


def test_jacobian_modes_agree_at_interior_point(logistic, rng):
    spec, g = logistic
    v = 0.4 + 0.1 * rng.random(g.n_x)
    lam = 2.0
    J_fd = jacobian(lam, v, spec, g, mode="fd")
    J_an = jacobian(lam, v, spec, g, mode="analytic")
    assert np.max(np.abs(J_fd - J_an)) <= 1e-5


def test_jacobian_mode_name_is_checked(logistic):
    spec, g = logistic
    with pytest.raises(ValueError):
        jacobian(1.0, np.zeros(g.n_x), spec, g, mode="adjoint")


def test_jacobian_modes_agree_along_branch(logistic, logistic_branch, rng):
    # forward-difference truncation scales with the same 1 + |v| factor as
    # the difference step itself, so agreement is checked in that relative form
    spec, g = logistic
    points = logistic_branch.points
    picks = rng.choice(len(points), size=min(10, len(points)), replace=False)
    for i in picks:
        pt = points[i]
        J_fd = jacobian(pt.lam, pt.v, spec, g, mode="fd")
        J_an = jacobian(pt.lam, pt.v, spec, g, mode="analytic")
        scale = 1.0 + float(np.max(np.abs(pt.v)))
        assert np.max(np.abs(J_fd - J_an)) <= 1e-5 * scale


def test_rank_deficiency_at_bifurcation(logistic):
    spec, g = logistic
    lam0 = bifurcation_point(spec, g).lambda0
    J = jacobian(lam0, np.zeros(g.n_x), spec, g, mode="analytic")
    sv = np.linalg.svd(J, compute_uv=False)
    assert sv[-1] <= 1e-8 * sv[-2]


# -- Newton corrector -----------------------------------------------------------

def test_corrector_keeps_trivial_solution(logistic):
    spec, g = logistic
    lam_target = 0.8
    constraint = AffineConstraint(1.0, np.zeros(g.n_x))
    pt = newton_correct(lam_target, np.zeros(g.n_x), constraint, lam_target, spec, g)
    assert pt.lam == lam_target
    assert np.all(pt.v == 0.0)
    assert pt.diagnostics.residual_norm == 0.0


def test_amplitude_constraint_off_the_trivial_branch_is_singular(constant_spec, constant_grid):
    # linear problems have no nontrivial solutions away from the critical
    # intensity: the bordered system degenerates at v = 0
    g = constant_grid
    bif = bifurcation_point(constant_spec, g)
    constraint = AffineConstraint(0.0, g.w_x * bif.psi0)
    with pytest.raises(SingularSystemError):
        newton_correct(0.5 * bif.lambda0, np.zeros(g.n_x), constraint, 0.01,
                       constant_spec, g)


def test_first_point_converges_quickly(logistic):
    spec, g = logistic
    bif = bifurcation_point(spec, g)
    t = 0.01
    constraint = AffineConstraint(0.0, g.w_x * bif.psi0)
    target = t * weighted_inner(bif.psi0, bif.phi0, g)
    pt = newton_correct(bif.lambda0, t * bif.phi0, constraint, target, spec, g)
    assert pt.diagnostics.newton_iters <= 6
    assert pt.diagnostics.residual_norm <= 1e-10


def test_exhausted_iteration_budget_raises_step_failure():
    from agebranch.errors import StepFailureError

    spec = make_spec("logistic_death", n_x=10, n_a=30, max_newton=1)
    g = build_grid(spec)
    bif = bifurcation_point(spec, g)
    constraint = AffineConstraint(0.0, g.w_x * bif.psi0)
    target = 0.01 * weighted_inner(bif.psi0, bif.phi0, g)
    with pytest.raises(StepFailureError) as err:
        newton_correct(bif.lambda0, 0.01 * bif.phi0, constraint, target, spec, g)
    assert err.value.iterations == 1
    assert err.value.residual_norm >= 0.0


# -- continuation ----------------------------------------------------------------

def test_linear_branch_is_vertical(constant_spec, constant_grid):
    spec, g = constant_spec, constant_grid
    lam0 = bifurcation_point(spec, g).lambda0
    params = ContinuationParams.from_spec(spec, u_norm_max=1.5, max_points=40,
                                          ds0=0.05, ds_max=0.25)
    branch = continue_branch(spec, g, params)
    assert branch.termination == "box_norm"
    assert len(branch.points) >= 3
    for pt in branch.points:
        assert abs(pt.lam - lam0) <= 1e-6
    norms = [pt.diagnostics.u_norm for pt in branch.points]
    assert all(b > a for a, b in zip(norms, norms[1:]))


def test_logistic_branch_is_supercritical_and_matches_oracle(logistic, logistic_branch):
    spec, g = logistic
    branch = logistic_branch
    assert branch.termination == "box_lambda"
    lams = [pt.lam for pt in branch.points]
    assert all(b > a for a, b in zip(lams, lams[1:]))
    for pt in branch.points:
        U = total_population(pt.u, g)
        U_mean = float(np.mean(U))
        assert np.max(np.abs(U - U_mean)) <= 1e-8
        lam_oracle = equilibrium_intensity(U_mean, 1.0, 1.0, 1.0, g)
        assert abs(pt.lam - lam_oracle) <= 1e-6 * pt.lam


def test_first_point_follows_the_tangent(logistic, logistic_branch):
    spec, g = logistic
    phi0 = logistic_branch.phi0
    v = logistic_branch.points[0].v
    cos = weighted_inner(v, phi0, g) / np.sqrt(
        weighted_inner(v, v, g) * weighted_inner(phi0, phi0, g))
    angle = np.degrees(np.arccos(min(1.0, cos)))
    assert angle <= 5.0


def test_branch_bookkeeping_invariants(logistic, logistic_branch):
    spec, g = logistic
    arcs = [pt.arclength for pt in logistic_branch.points]
    assert all(b > a for a, b in zip(arcs, arcs[1:]))
    assert len(logistic_branch.tangent_history) >= len(logistic_branch.points) - 1
    for pt in logistic_branch.points:
        assert pt.diagnostics.residual_norm <= spec.newton_tol
        assert pt.diagnostics.min_u >= -1e-12
        # the stored field is the fresh reconstruction of the trace
        assert field_norm(pt.u - quasilinear_march(pt.v, spec, g), g) <= 10 * spec.inner_tol


def test_trace_is_perron_vector_of_frozen_map(logistic, logistic_branch):
    spec, g = logistic
    for pt in logistic_branch.points[::5]:
        Q = next_generation_operator(pt.u, spec, g)
        defect = np.max(np.abs(pt.lam * Q @ pt.v - pt.v))
        assert defect <= 1e-8 * np.max(np.abs(pt.v))


def test_box_excluding_the_branch_gives_empty_run(logistic):
    spec, g = logistic
    lam0 = bifurcation_point(spec, g).lambda0
    params = ContinuationParams.from_spec(spec, lambda_max=0.9 * lam0)
    branch = continue_branch(spec, g, params)
    assert branch.termination == "box_lambda"
    assert branch.points == []


# -- invariant report ------------------------------------------------------------

def test_invariant_report_on_trivial_point(logistic):
    spec, g = logistic
    pt = newton_correct(1.0, np.zeros(g.n_x), AffineConstraint(1.0, np.zeros(g.n_x)),
                        1.0, spec, g)
    report = branch_invariant_check(pt, spec, g)
    assert report.trivial
    assert report.passed
    lam0 = bifurcation_point(spec, g).lambda0
    assert abs(report.radius * lam0 - 1.0) <= 1e-10  # radius is that of zero density


def test_invariant_report_on_branch(logistic, logistic_branch):
    spec, g = logistic
    report = branch_invariant_check(logistic_branch.points[-1], spec, g)
    assert report.radius_defect <= 1e-6
    assert report.passed


def test_invariant_report_flags_corrupted_point(logistic, logistic_branch):
    spec, g = logistic
    pt = logistic_branch.points[-1]
    bad_v = pt.v * 1.01
    bad = BranchPoint(lam=pt.lam, v=bad_v, u=quasilinear_march(bad_v, spec, g),
                      arclength=pt.arclength, diagnostics=pt.diagnostics)
    report = branch_invariant_check(bad, spec, g)
    assert not report.passed
    assert report.radius_defect > 1e-6
