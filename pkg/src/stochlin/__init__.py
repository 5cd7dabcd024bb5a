"""Linearization of stochastic differential equations around hyperbolic fixed points.

Euler-Maruyama ensembles on counter-based random streams, Girsanov
reweighting between a nonlinear SDE and its linearization, slow-fast
concentration statistics and mollifier-based regularity probes.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    ContinuationBreak,
    DegenerateWeights,
    DomainEscape,
    EigenSolverFailure,
    EmptyEnsemble,
    IllConditioned,
    InsufficientExits,
    LyapunovSolveFailure,
    NoConvergence,
    NonFinite,
    QuadratureUnderresolved,
    RangeConditionViolated,
    SingularJacobian,
    StiffnessViolation,
    StochLinError,
    SupportEscape,
)
from .kernels import BACKEND
from .linearization import (
    Classification,
    FixedPoint,
    LinearizedSystem,
    classify_hyperbolicity,
    find_fixed_point,
    linearize,
)
from .sde import (
    BrownianPath,
    DiffusionField,
    Ensemble,
    SdePath,
    TimeGrid,
    VectorField,
    euler_maruyama,
    mc_estimate,
    sample_brownian,
    simulate_ensemble,
)

__all__ = [
    "ConfigError",
    "ContinuationBreak",
    "DegenerateWeights",
    "DomainEscape",
    "EigenSolverFailure",
    "EmptyEnsemble",
    "IllConditioned",
    "InsufficientExits",
    "LyapunovSolveFailure",
    "NoConvergence",
    "NonFinite",
    "QuadratureUnderresolved",
    "RangeConditionViolated",
    "SingularJacobian",
    "StiffnessViolation",
    "StochLinError",
    "SupportEscape",
    "BACKEND",
    "BrownianPath",
    "Classification",
    "DiffusionField",
    "Ensemble",
    "FixedPoint",
    "LinearizedSystem",
    "SdePath",
    "TimeGrid",
    "VectorField",
    "classify_hyperbolicity",
    "euler_maruyama",
    "find_fixed_point",
    "linearize",
    "mc_estimate",
    "sample_brownian",
    "simulate_ensemble",
]
