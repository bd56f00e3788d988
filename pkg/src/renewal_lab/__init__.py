"""Numerical laboratory for age-and-trait structured renewal populations.

The package simulates the scaled renewal model (aging transport, nonlocal
birth boundary, competition through the total mass), computes the
per-trait eigenvalue problem that defines the effective fitness, tracks
the profile/potential factorization and its entropy diagnostics, exposes
the vanishing-scale limit objects (canonical trait dynamics), and solves
the mutation-case nonlocal Hamilton-Jacobi equation with a certified
truncation.
"""

from .adaptive import (
    ConcavityLossError,
    LimitModel,
    canonical_step,
    canonical_trajectory,
    concentration_point,
    critical_points,
    limit_u,
    rho_from_sup,
    rho_monotonicity_check,
    rho_series,
)
from .decomposition import (
    DecompositionRecord,
    ProfileTracker,
    entropy,
    evolve_u,
    extract_profile,
    gamma0_estimate,
    weighted_distance,
)
from .eigen import (
    AccuracyError,
    BracketError,
    EigenField,
    EigenOverflowError,
    EigenSolver,
    Hamiltonian,
    exp_moment,
    solve_field,
)
from .expressions import ExpressionError, format_expression, parse_expression
from .hjb import (
    CertificationError,
    HJStepper,
    HJTrajectory,
    eta_bracket,
    mutation_intensity,
    soft_clamp,
    solve_hj,
    viscosity_limit_study,
)
from .model import (
    CoefficientModel,
    Grid,
    GridError,
    InitialData,
    MutationKernel,
    ValidationReport,
    kernel_quadrature,
    validate_assumptions,
)
from .transport import (
    InstabilityError,
    PopulationState,
    RenewalSimulator,
    SaturationBounds,
    Trajectory,
    init_population,
    run_simulation,
    step_no_mutation,
    step_with_mutation,
)

__version__ = "0.1.0"
