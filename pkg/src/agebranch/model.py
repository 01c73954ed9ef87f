"""Problem definition: coefficient functions, grids, and discrete fields.

Discrete fields are plain numpy arrays with a fixed shape convention:

* a spatial field is a float vector of length ``n_x`` (one value per node of
  the spatial interval), used for traces, total populations and eigenvectors;
* an age-space field is an ``(n_a + 1, n_x)`` array whose row ``k`` holds the
  solution at age ``a_nodes[k]``.

All types are immutable after construction and every operation in this
package is a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import CoefficientBoundError

SpatialField = np.ndarray
AgeSpaceField = np.ndarray

DiffusivityFun = Callable[[np.ndarray], np.ndarray]
RateFun = Callable[[np.ndarray, float], np.ndarray]

_FD_REL_STEP = 1e-6


def _central_difference(f):
    def deriv(z):
        z = np.asarray(z, dtype=float)
        h = _FD_REL_STEP * (1.0 + np.abs(z))
        return (np.asarray(f(z + h), float) - np.asarray(f(z - h), float)) / (2.0 * h)

    return deriv


def _central_difference_rate(f):
    def deriv(z, age):
        z = np.asarray(z, dtype=float)
        h = _FD_REL_STEP * (1.0 + np.abs(z))
        return (np.asarray(f(z + h, age), float) - np.asarray(f(z - h, age), float)) / (2.0 * h)

    return deriv


def _broadcast(values, z: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape != z.shape:
        values = np.broadcast_to(values, z.shape)
    return values


@dataclass(frozen=True)
class ModelSpec:
    """One problem instance: coefficients, domain, grid sizes and tolerances.

    The diffusivity ``d`` takes the local total population ``z`` and must stay
    at or above ``d_lower > 0``; death rate ``mu(z, age)`` and birth rate
    ``b(z, age)`` must be nonnegative.  All three bounds are enforced on every
    evaluation through the ``eval_*`` methods, and a violation is a hard error.

    Derivatives ``d_prime``, ``mu_z``, ``b_z`` (partials in ``z``) are needed
    for the analytic Jacobian mode.  When omitted they are replaced by central
    differences with step ``1e-6 * (1 + |z|)`` and ``derivatives_from_fd`` is
    set so downstream diagnostics can flag the substitution.
    """

    d: DiffusivityFun
    mu: RateFun
    b: RateFun
    d_lower: float
    x_min: float = 0.0
    x_max: float = 1.0
    a_max: float = 1.0
    n_x: int = 32
    n_a: int = 100
    d_prime: DiffusivityFun | None = None
    mu_z: RateFun | None = None
    b_z: RateFun | None = None

    # solver tolerances
    newton_tol: float = 1e-10
    inner_tol: float = 1e-11
    eigen_tol: float = 1e-10
    fd_eps: float = 1e-7

    # continuation parameters
    t0: float = 1e-2
    ds0: float = 2e-2
    ds_min: float = 1e-6
    ds_max: float = 0.25
    lambda_max: float = 10.0
    u_norm_max: float = 50.0
    max_points: int = 200
    pos_tol: float = 1e-12

    # iteration budgets
    max_inner: int = 200
    max_newton: int = 12
    power_max_iter: int = 100_000

    # certificate thresholds
    simplicity_tol: float = 1e-8
    gap_tol: float = 1e-6
    rank_tol: float = 1e-8
    radius_identity_tol: float = 1e-6

    # provenance for configs built from a named coefficient family
    family: str | None = None
    family_params: dict | None = None

    derivatives_from_fd: bool = field(init=False, default=False)

    def __post_init__(self):
        fd_used = False
        if self.d_prime is None:
            object.__setattr__(self, "d_prime", _central_difference(self.d))
            fd_used = True
        if self.mu_z is None:
            object.__setattr__(self, "mu_z", _central_difference_rate(self.mu))
            fd_used = True
        if self.b_z is None:
            object.__setattr__(self, "b_z", _central_difference_rate(self.b))
            fd_used = True
        object.__setattr__(self, "derivatives_from_fd", fd_used)

    # -- checked coefficient evaluation ------------------------------------

    def eval_d(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        values = _broadcast(self.d(z), z)
        if not np.all(np.isfinite(values)):
            raise CoefficientBoundError("d(z) evaluated to a non-finite value")
        if np.any(values < self.d_lower):
            raise CoefficientBoundError(
                f"d(z) = {values.min():.6g} fell below the declared bound "
                f"d_lower = {self.d_lower:.6g}"
            )
        return values

    def eval_mu(self, z, age: float) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        values = _broadcast(self.mu(z, age), z)
        if not np.all(np.isfinite(values)):
            raise CoefficientBoundError("mu(z, a) evaluated to a non-finite value")
        if np.any(values < 0.0):
            raise CoefficientBoundError(
                f"mu(z, a) = {values.min():.6g} is negative at age {age:.6g}"
            )
        return values

    def eval_b(self, z, age: float) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        values = _broadcast(self.b(z, age), z)
        if not np.all(np.isfinite(values)):
            raise CoefficientBoundError("b(z, a) evaluated to a non-finite value")
        if np.any(values < 0.0):
            raise CoefficientBoundError(
                f"b(z, a) = {values.min():.6g} is negative at age {age:.6g}"
            )
        return values

    def eval_d_prime(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return _broadcast(self.d_prime(z), z)

    def eval_mu_z(self, z, age: float) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return _broadcast(self.mu_z(z, age), z)

    def eval_b_z(self, z, age: float) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return _broadcast(self.b_z(z, age), z)


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid over age x space with trapezoidal quadrature."""

    x_nodes: np.ndarray
    dx: float
    a_nodes: np.ndarray
    da: float
    w_x: np.ndarray
    w_a: np.ndarray

    @property
    def n_x(self) -> int:
        return self.x_nodes.size

    @property
    def n_a(self) -> int:
        return self.a_nodes.size - 1


def _trapezoid_weights(n_nodes: int, h: float) -> np.ndarray:
    w = np.full(n_nodes, h)
    w[0] = 0.5 * h
    w[-1] = 0.5 * h
    return w


def build_grid(spec: ModelSpec) -> Grid:
    """Build the uniform grid and exact trapezoidal weights for ``spec``."""
    if spec.n_x < 3:
        raise ValueError(f"n_x must be >= 3, got {spec.n_x}")
    if spec.n_a < 2:
        raise ValueError(f"n_a must be >= 2, got {spec.n_a}")
    if spec.a_max <= 0.0:
        raise ValueError(f"a_max must be positive, got {spec.a_max}")
    if spec.x_max <= spec.x_min:
        raise ValueError(f"x_max must exceed x_min, got [{spec.x_min}, {spec.x_max}]")

    x_nodes = np.linspace(spec.x_min, spec.x_max, spec.n_x)
    dx = (spec.x_max - spec.x_min) / (spec.n_x - 1)
    a_nodes = np.linspace(0.0, spec.a_max, spec.n_a + 1)
    da = spec.a_max / spec.n_a
    return Grid(
        x_nodes=x_nodes,
        dx=dx,
        a_nodes=a_nodes,
        da=da,
        w_x=_trapezoid_weights(spec.n_x, dx),
        w_a=_trapezoid_weights(spec.n_a + 1, da),
    )


def check_spatial(v: SpatialField, g: Grid, name: str = "field") -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (g.n_x,):
        raise ValueError(f"{name} has shape {v.shape}, expected ({g.n_x},)")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def check_age_space(u: AgeSpaceField, g: Grid, name: str = "field") -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (g.n_a + 1, g.n_x):
        raise ValueError(f"{name} has shape {u.shape}, expected ({g.n_a + 1}, {g.n_x})")
    if not np.all(np.isfinite(u)):
        raise ValueError(f"{name} contains non-finite entries")
    return u


def total_population(u: AgeSpaceField, g: Grid) -> SpatialField:
    """Trapezoidal age integral of ``u``, node by node in space."""
    u = check_age_space(u, g, "age-space field")
    return g.w_a @ u


# -- discrete norms ---------------------------------------------------------

def trace_norm(v: SpatialField, g: Grid) -> float:
    """Spatial l2 norm scaled by sqrt(dx)."""
    return float(np.sqrt(g.dx) * np.linalg.norm(v))


def field_norm(u: AgeSpaceField, g: Grid) -> float:
    """Max over age rows of the sqrt(dx)-scaled spatial l2 norm."""
    return float(np.max(np.sqrt(g.dx) * np.linalg.norm(u, axis=1)))


def weighted_inner(a: SpatialField, b: SpatialField, g: Grid) -> float:
    """Trapezoid-weighted spatial inner product."""
    return float(np.sum(g.w_x * a * b))


# -- built-in coefficient families -----------------------------------------

FAMILY_NAMES = ("constant", "logistic_death", "density_diffusion")

_FAMILY_PARAMS = {
    "constant": {"d0": 1.0, "mu0": 1.0, "b0": 1.0},
    "logistic_death": {"d0": 1.0, "mu0": 1.0, "b0": 1.0, "kappa": 1.0},
    "density_diffusion": {"d0": 1.0, "d1": 0.5, "mu0": 1.0, "b0": 1.0, "kappa": 1.0},
}


def family_parameters(family: str, params: dict | None = None) -> dict:
    """Merge user parameters into a family's defaults, rejecting unknown keys."""
    if family not in _FAMILY_PARAMS:
        raise ValueError(f"unknown coefficient family {family!r}; "
                         f"choose one of {FAMILY_NAMES}")
    merged = dict(_FAMILY_PARAMS[family])
    for key, value in (params or {}).items():
        if key not in merged:
            raise ValueError(f"family {family!r} has no parameter {key!r}")
        merged[key] = float(value)
    return merged


def make_spec(family: str, params: dict | None = None, **spec_kwargs) -> ModelSpec:
    """Build a ModelSpec from a named coefficient family.

    ``constant``           d = d0, mu = mu0, b = b0
    ``logistic_death``     d = d0, mu = mu0 + kappa*z, b = b0
    ``density_diffusion``  d = d0 + d1*z^2, mu = mu0 + kappa*z, b = b0

    Keyword arguments are passed through to :class:`ModelSpec` (grid sizes,
    domain bounds, tolerances, continuation parameters).
    """
    p = family_parameters(family, params)
    d0, mu0, b0 = p["d0"], p["mu0"], p["b0"]
    if d0 <= 0.0:
        raise ValueError("d0 must be positive")

    if family == "constant":
        coeffs = dict(
            d=lambda z: np.full_like(np.asarray(z, float), d0),
            d_prime=lambda z: np.zeros_like(np.asarray(z, float)),
            mu=lambda z, a: np.full_like(np.asarray(z, float), mu0),
            mu_z=lambda z, a: np.zeros_like(np.asarray(z, float)),
        )
    elif family == "logistic_death":
        kappa = p["kappa"]
        coeffs = dict(
            d=lambda z: np.full_like(np.asarray(z, float), d0),
            d_prime=lambda z: np.zeros_like(np.asarray(z, float)),
            mu=lambda z, a: mu0 + kappa * np.asarray(z, float),
            mu_z=lambda z, a: np.full_like(np.asarray(z, float), kappa),
        )
    else:  # density_diffusion; d0 + d1*z^2 stays >= d0 for every probed z
        d1, kappa = p["d1"], p["kappa"]
        if d1 < 0.0:
            raise ValueError("d1 must be nonnegative")
        coeffs = dict(
            d=lambda z: d0 + d1 * np.asarray(z, float) ** 2,
            d_prime=lambda z: 2.0 * d1 * np.asarray(z, float),
            mu=lambda z, a: mu0 + kappa * np.asarray(z, float),
            mu_z=lambda z, a: np.full_like(np.asarray(z, float), kappa),
        )

    return ModelSpec(
        b=lambda z, a: np.full_like(np.asarray(z, float), b0),
        b_z=lambda z, a: np.zeros_like(np.asarray(z, float)),
        d_lower=d0,
        family=family,
        family_params=p,
        **coeffs,
        **spec_kwargs,
    )
