"""Discrete operators: diffusion-death assembly, age march, birth integral.

The elliptic part is a conservative finite-difference operator on the uniform
spatial grid with zero-flux (Neumann) closure by ghost-node reflection.  Face
diffusivities are arithmetic means of the nodal values.  The age direction is
integrated by implicit Euler, which keeps the M-matrix sign pattern and hence
preserves nonnegativity unconditionally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .model import (
    AgeSpaceField,
    Grid,
    ModelSpec,
    SpatialField,
    check_age_space,
    check_spatial,
    total_population,
)

DenseOperator = np.ndarray


@dataclass(frozen=True)
class EllipticOperator:
    """Tridiagonal diffusion-death operator acting on spatial fields.

    Row sums equal the nodal reaction coefficients (the diffusion part
    annihilates constants), and the dx-weighted matrix ``W A`` is symmetric.
    """

    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray

    def apply(self, w: SpatialField) -> SpatialField:
        out = self.diag * w
        out[:-1] += self.upper * w[1:]
        out[1:] += self.lower * w[:-1]
        return out

    def to_dense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.upper, 1) + np.diag(self.lower, -1)

    def solve_shifted(self, step: float, rhs):
        """Solve ``(I + step * A) w = rhs``; rhs may carry extra RHS columns."""
        return _shifted_solve_bands(self.lower, self.diag, self.upper, step, rhs)


def _diffusion_bands(U_rows: np.ndarray, spec: ModelSpec, g: Grid):
    """Diffusion bands for a stack of frozen populations, shape (..., n_x).

    Face diffusivities are arithmetic means of nodal values; the ghost-node
    reflection doubles the single face at each boundary row.
    """
    d_nodes = spec.eval_d(U_rows)
    face = 0.5 * (d_nodes[..., :-1] + d_nodes[..., 1:])
    inv_dx2 = 1.0 / g.dx**2

    upper = -face * inv_dx2
    lower = upper.copy()
    diag = np.empty_like(d_nodes)
    diag[..., 1:-1] = (face[..., :-1] + face[..., 1:]) * inv_dx2
    diag[..., 0] = 2.0 * face[..., 0] * inv_dx2
    diag[..., -1] = 2.0 * face[..., -1] * inv_dx2
    upper[..., 0] *= 2.0
    lower[..., -1] *= 2.0
    return lower, diag, upper


def assemble_elliptic(U: SpatialField, age: float, spec: ModelSpec, g: Grid) -> EllipticOperator:
    """Assemble the diffusion-death operator at total population ``U``."""
    U = check_spatial(U, g, "total population")
    if age < -1e-12 or age > spec.a_max * (1.0 + 1e-12):
        raise ValueError(f"age {age} outside [0, {spec.a_max}]")
    lower, diag, upper = _diffusion_bands(U, spec, g)
    return EllipticOperator(lower=lower, diag=diag + spec.eval_mu(U, age), upper=upper)


def divergence_form(c_nodes: np.ndarray, w: SpatialField, g: Grid) -> np.ndarray:
    """Apply ``-(c w_x)_x`` with the same stencil and Neumann closure as
    :func:`assemble_elliptic`, for a nodal coefficient of arbitrary sign."""
    c_face = 0.5 * (c_nodes[:-1] + c_nodes[1:])
    inv_dx2 = 1.0 / g.dx**2
    out = np.empty_like(w)
    out[1:-1] = -(c_face[1:] * (w[2:] - w[1:-1]) - c_face[:-1] * (w[1:-1] - w[:-2])) * inv_dx2
    out[0] = -2.0 * c_face[0] * (w[1] - w[0]) * inv_dx2
    out[-1] = -2.0 * c_face[-1] * (w[-2] - w[-1]) * inv_dx2
    return out


def _shifted_solve_bands(lower, diag, upper, step: float, rhs):
    """Solve ``(I + step * tridiag) w = rhs`` given the raw bands."""
    n = diag.size
    ab = np.zeros((3, n))
    ab[0, 1:] = step * upper
    ab[1, :] = 1.0 + step * diag
    ab[2, :-1] = step * lower
    w = solve_banded((1, 1), ab, rhs, check_finite=False)
    if not np.all(np.isfinite(w)):
        raise ArithmeticError(
            "implicit age step produced non-finite values; the shifted "
            "operator should be an invertible M-matrix for mu >= 0"
        )
    return w


def evolve(U: SpatialField, w0: SpatialField, spec: ModelSpec, g: Grid,
           source: AgeSpaceField | None = None) -> AgeSpaceField:
    """March the linear age problem from trace ``w0`` by implicit Euler.

    Solves ``d_age w + A(U, age) w = source`` with ``w(0) = w0``, where the
    operator is frozen at the supplied total population ``U`` (age enters only
    through the death rate).  With ``source=None`` this is the positive
    evolution from age zero applied to ``w0``; supplying both a source and a
    trace gives the general inhomogeneous solve.
    """
    U = check_spatial(U, g, "total population")
    w0 = check_spatial(w0, g, "initial trace")
    if source is not None:
        source = check_age_space(source, g, "source")

    lower, dif_diag, upper = _diffusion_bands(U, spec, g)
    u = np.empty((g.n_a + 1, g.n_x))
    u[0] = w0
    w = w0
    for k in range(1, g.n_a + 1):
        diag = dif_diag + spec.eval_mu(U, g.a_nodes[k])
        rhs = w if source is None else w + g.da * source[k]
        w = _shifted_solve_bands(lower, diag, upper, g.da, rhs)
        u[k] = w
    return u


def _evolve_columns(U: SpatialField, w0_cols: np.ndarray, spec: ModelSpec, g: Grid,
                    source_cols: np.ndarray | None = None) -> np.ndarray:
    """Vectorized :func:`evolve` over a block of column vectors.

    ``w0_cols`` has shape (n_x, m); the optional source has shape
    (n_a + 1, n_x, m).  Returns the (n_a + 1, n_x, m) stack of marches.
    All columns share the same frozen ``U``, so each age step is a single
    multi-RHS banded solve.
    """
    out = np.empty((g.n_a + 1,) + w0_cols.shape)
    out[0] = w0_cols
    w = w0_cols
    for k in range(1, g.n_a + 1):
        op = assemble_elliptic(U, g.a_nodes[k], spec, g)
        rhs = w if source_cols is None else w + g.da * source_cols[k]
        w = op.solve_shifted(g.da, rhs)
        out[k] = w
    return out


def _block_shifted_solve(lower, diag, upper, step: float, rhs):
    """Solve ``(I + step * tridiag_i) w_i = rhs_i`` for a stack of systems.

    Bands and right-hand sides have shape (m, n).  The m uncoupled
    tridiagonal systems are concatenated into one banded system (the blocks
    do not interact, so the boundary couplings are zero) and handed to a
    single banded solve.
    """
    m, n = diag.shape
    ab = np.zeros((3, m * n))
    sup = np.zeros((m, n))
    sup[:, 1:] = step * upper
    sub = np.zeros((m, n))
    sub[:, :-1] = step * lower
    ab[0] = sup.ravel()
    ab[1] = 1.0 + step * diag.ravel()
    ab[2] = sub.ravel()
    w = solve_banded((1, 1), ab, rhs.reshape(m * n), check_finite=False).reshape(m, n)
    if not np.all(np.isfinite(w)):
        raise ArithmeticError(
            "implicit age step produced non-finite values; the shifted "
            "operator should be an invertible M-matrix for mu >= 0"
        )
    return w


def _evolve_block(U_rows: np.ndarray, traces: np.ndarray, spec: ModelSpec,
                  g: Grid) -> np.ndarray:
    """March m independent traces, each under its own frozen population.

    ``U_rows`` and ``traces`` have shape (m, n_x); returns (m, n_a+1, n_x).
    Row ``i`` equals ``evolve(U_rows[i], traces[i], spec, g)`` up to the
    solver's round-off; the block form exists so difference-quotient
    Jacobians can march all perturbed traces in lockstep.
    """
    m = traces.shape[0]
    lower, dif_diag, upper = _diffusion_bands(U_rows, spec, g)
    out = np.empty((m, g.n_a + 1, g.n_x))
    out[:, 0, :] = traces
    w = traces
    for k in range(1, g.n_a + 1):
        diag = dif_diag + spec.eval_mu(U_rows, g.a_nodes[k])
        w = _block_shifted_solve(lower, diag, upper, g.da, w)
        out[:, k, :] = w
    return out


def birth_functional(V: SpatialField, u: AgeSpaceField, lam: float,
                     spec: ModelSpec, g: Grid) -> SpatialField:
    """Age integral ``lam * int b(V(x), a) u(a, x) da`` by the trapezoid rule.

    ``V`` is the total population of the field that defines the nonlinearity;
    keeping it consistent with ``u`` is the caller's responsibility.
    """
    V = check_spatial(V, g, "density argument")
    u = check_age_space(u, g, "age-space field")
    b_rows = np.stack([spec.eval_b(V, age) for age in g.a_nodes])
    return lam * np.einsum("k,kn,kn->n", g.w_a, b_rows, u)


def next_generation_operator(u: AgeSpaceField, spec: ModelSpec, g: Grid) -> DenseOperator:
    """Dense birth-return map on traces, frozen at the field ``u``.

    Column ``j`` equals ``birth_functional(U, evolve(U, e_j), 1)`` with
    ``U = total_population(u)``: newborns placed at node ``j`` are evolved
    through all ages and weighted by the birth rate.  The assembly runs all
    columns through one multi-RHS march.
    """
    u = check_age_space(u, g, "frozen field")
    U = total_population(u, g)
    cols = np.eye(g.n_x)
    Q = g.w_a[0] * spec.eval_b(U, 0.0)[:, None] * cols
    for k in range(1, g.n_a + 1):
        op = assemble_elliptic(U, g.a_nodes[k], spec, g)
        cols = op.solve_shifted(g.da, cols)
        Q = Q + g.w_a[k] * spec.eval_b(U, g.a_nodes[k])[:, None] * cols
    return Q
