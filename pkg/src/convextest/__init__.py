"""Hypothesis testing between convex hypotheses by convex optimization."""

from .discrete import (
    DiscreteScheme,
    SurrogateLoss,
    TabulatedDetector,
    compare_surrogates,
    direct_solve,
    hellinger_affinity,
    hellinger_closest_pair,
    log_g_exp,
    optimal_detector_for_pair,
    pair_objective,
    phi_risk,
    saddle_solve_product,
    sandwich_product_check,
    worst_case_error,
)
from .errors import (
    ConvexTestError,
    DegeneratePair,
    DimensionMismatch,
    InvalidRegime,
    NonConvergence,
    OverlappingHypotheses,
    ZeroMassOutcome,
)
from .gaussian import (
    AffineDetector,
    GaussianScheme,
    OptimalityCertificate,
    SaddleSolution,
    bound_exact_reference,
    bound_gjn,
    bound_normalized_reference,
    certificate,
    epsilon_star,
    mc_error,
    normal_cdf,
    sandwich_check,
    solve_closest_pair,
)
from .geometry import Ball, Box, ConvexSet, Ellipsoid, Polytope, contains, project, support

__version__ = "0.1.0"
