"""Sparse combination-technique approximation toolkit.

Generic engine for multilinear approximation problems built on simplex
multi-index sets, Matern-kernel scattered-data interpolation, a compact
P1 finite-element solver on the unit square, and configuration-driven
uncertainty-quantification pipelines (multilevel and multi-index
expectations, response surfaces, optimization under uncertainty).
"""

__version__ = "0.1.0"

from kernelkit.kernels import (
    ConditioningError,
    Interpolant,
    MaternKernel,
    QuadratureRule,
    TensorKernel,
    evaluate_interpolant,
    fit_interpolant,
    matern_evaluate,
    quadrature_weights,
    sparse_interpolate,
)
from kernelkit.multiindex import (
    CombinationTerm,
    combination_coefficients,
    delta_expand,
    enumerate_simplex,
    exponential_sum,
)
from kernelkit.points import Box, Disc, PointSet, fill_distance, generate_points
from kernelkit.smolyak import (
    FactorSpec,
    ProblemSpec,
    RatePrediction,
    SmolyakEngine,
    WorkLedger,
    convergence_study,
    fit_loglog_slope,
    level_to_resolution,
    predicted_rates,
    smolyak_estimate,
    smolyak_via_deltas,
)
from kernelkit.surrogate import Surrogate, load_surrogate, save_surrogate

__all__ = [
    "__version__",
    "Box",
    "CombinationTerm",
    "ConditioningError",
    "Disc",
    "FactorSpec",
    "Interpolant",
    "MaternKernel",
    "PointSet",
    "ProblemSpec",
    "QuadratureRule",
    "RatePrediction",
    "SmolyakEngine",
    "Surrogate",
    "TensorKernel",
    "WorkLedger",
    "combination_coefficients",
    "convergence_study",
    "delta_expand",
    "enumerate_simplex",
    "evaluate_interpolant",
    "exponential_sum",
    "fill_distance",
    "fit_interpolant",
    "fit_loglog_slope",
    "generate_points",
    "level_to_resolution",
    "load_surrogate",
    "matern_evaluate",
    "predicted_rates",
    "quadrature_weights",
    "save_surrogate",
    "smolyak_estimate",
    "smolyak_via_deltas",
    "sparse_interpolate",
]
