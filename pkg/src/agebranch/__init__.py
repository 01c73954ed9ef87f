"""Branch continuation of positive equilibria for age-structured populations
with density-dependent diffusion and renewal birth conditions."""

from .errors import (
    CoefficientBoundError,
    ConfigError,
    InnerIterationError,
    NoPositiveEigenvalueError,
    PositivityError,
    PowerIterationError,
    SingularSystemError,
    StepFailureError,
)
from .model import (
    AgeSpaceField,
    FAMILY_NAMES,
    Grid,
    ModelSpec,
    SpatialField,
    build_grid,
    field_norm,
    make_spec,
    total_population,
    trace_norm,
    weighted_inner,
)
from .operators import (
    EllipticOperator,
    assemble_elliptic,
    birth_functional,
    evolve,
    next_generation_operator,
)
from .solver import (
    AffineConstraint,
    Branch,
    BranchPoint,
    ContinuationParams,
    InvariantReport,
    PointDiagnostics,
    branch_invariant_check,
    continue_branch,
    full_residual,
    jacobian,
    newton_correct,
    quasilinear_march,
    reduced_residual,
)
from .spectral import (
    BifurcationPoint,
    PerronResult,
    SimplicityCertificate,
    bifurcation_point,
    check_simplicity,
    perron_eigenpair,
)
from .validate import (
    KernelReport,
    TransientState,
    TransversalityCertificate,
    kernel_dimension,
    simulate_transient,
    transversality_check,
)

__version__ = "0.1.0"

__all__ = [
    "AffineConstraint",
    "AgeSpaceField",
    "BifurcationPoint",
    "Branch",
    "BranchPoint",
    "CoefficientBoundError",
    "ConfigError",
    "ContinuationParams",
    "EllipticOperator",
    "FAMILY_NAMES",
    "Grid",
    "InnerIterationError",
    "InvariantReport",
    "KernelReport",
    "ModelSpec",
    "NoPositiveEigenvalueError",
    "PerronResult",
    "PointDiagnostics",
    "PositivityError",
    "PowerIterationError",
    "SimplicityCertificate",
    "SingularSystemError",
    "SpatialField",
    "StepFailureError",
    "TransientState",
    "TransversalityCertificate",
    "assemble_elliptic",
    "bifurcation_point",
    "birth_functional",
    "branch_invariant_check",
    "build_grid",
    "check_simplicity",
    "continue_branch",
    "evolve",
    "field_norm",
    "full_residual",
    "jacobian",
    "kernel_dimension",
    "make_spec",
    "newton_correct",
    "next_generation_operator",
    "perron_eigenpair",
    "quasilinear_march",
    "reduced_residual",
    "simulate_transient",
    "total_population",
    "trace_norm",
    "transversality_check",
    "weighted_inner",
]
