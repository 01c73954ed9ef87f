"""Scalar-reduction oracles for spatially homogeneous models.

When the coefficients do not depend on space, constants are invariant under
the Neumann diffusion step and the whole problem collapses to a scalar
recurrence in age: a cohort born with density ``c`` has density
``c * (1 + m*da)**(-k)`` at age node ``k``, where ``m`` is the (constant)
death rate.  These closed forms are kept independent of the operator layer
and serve as cross-checks for it.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import brentq

from .model import Grid


def survival_sum(m: float, g: Grid) -> float:
    """Trapezoid age integral of the implicit-Euler survival profile."""
    decay = (1.0 + m * g.da) ** (-np.arange(g.n_a + 1))
    return float(np.dot(g.w_a, decay))


def homogeneous_profile(amplitude: float, m: float, g: Grid) -> np.ndarray:
    """Age profile of a cohort with constant death rate ``m``."""
    return amplitude * (1.0 + m * g.da) ** (-np.arange(g.n_a + 1, dtype=float))


def closed_form_critical_intensity(mu0: float, b0: float, a_max: float) -> float:
    """Continuum critical intensity for constant coefficients."""
    if b0 <= 0.0:
        raise ValueError("b0 must be positive")
    if mu0 == 0.0:
        return 1.0 / (b0 * a_max)
    return mu0 / (b0 * (1.0 - np.exp(-mu0 * a_max)))


def discrete_critical_intensity(mu0: float, b0: float, g: Grid) -> float:
    """Critical intensity of the discretized constant-coefficient model."""
    if b0 <= 0.0:
        raise ValueError("b0 must be positive")
    return 1.0 / (b0 * survival_sum(mu0, g))


def equilibrium_intensity(U: float, mu0: float, kappa: float, b0: float, g: Grid) -> float:
    """Intensity at which total population ``U`` is an equilibrium.

    Solves the homogeneous branch relation lam * b0 * S(mu0 + kappa*U) = 1
    for lam, given U.
    """
    return 1.0 / (b0 * survival_sum(mu0 + kappa * U, g))


def equilibrium_population(lam: float, mu0: float, kappa: float, b0: float,
                           g: Grid) -> float:
    """Total population of the homogeneous equilibrium at intensity ``lam``.

    Root of lam * b0 * S(mu0 + kappa*U) - 1 in U; returns 0 at or below the
    critical intensity.  Requires kappa > 0 so the branch relation is
    monotone.
    """
    if kappa <= 0.0:
        raise ValueError("equilibrium_population needs kappa > 0")

    def f(U):
        return lam * b0 * survival_sum(mu0 + kappa * U, g) - 1.0

    if f(0.0) <= 0.0:
        return 0.0
    hi = 1.0
    while f(hi) > 0.0:
        hi *= 2.0
        if hi > 1e12:
            raise RuntimeError("failed to bracket the homogeneous equilibrium")
    return float(brentq(f, 0.0, hi, xtol=1e-14, rtol=1e-15))


def march_population(amplitude: float, mu0: float, kappa: float, b0: float,
                     g: Grid) -> float:
    """Self-consistent total population for a constant trace ``amplitude``.

    Scalar counterpart of the quasilinear fixed point: U = amplitude *
    S(mu0 + kappa*U).  ``b0`` is unused by the relation but kept for a uniform
    oracle signature.
    """
    del b0

    def f(U):
        return U - amplitude * survival_sum(mu0 + kappa * U, g)

    if amplitude == 0.0:
        return 0.0
    hi = max(1.0, amplitude * survival_sum(mu0, g))
    while f(hi) < 0.0:
        hi *= 2.0
        if hi > 1e12:
            raise RuntimeError("failed to bracket the march fixed point")
    return float(brentq(f, 0.0, hi, xtol=1e-15, rtol=1e-15))
