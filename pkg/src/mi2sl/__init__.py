"""Spatial IV estimation with Moran's I guided eigenvector selection (Mi-2SL)."""

from __future__ import annotations

__version__ = "0.1.0"

from .algorithm import (
    Mi2SLConfig,
    Mi2SLFit,
    RegressionData,
    Variant,
    candidate_eigenvectors,
    fit_mi2sl,
    format_counts,
    plain_tsls,
    selection_counts,
)
from .errors import Mi2SLError, NumericalError, ValidationError
from .estim import FirstStageDiagnostics, FitResult, first_stage_f, ols, tsls, tsls_sar
from .lasso import LassoFit, LassoProblem, fit_partial_lasso, lambda_max, post_lasso, tuning_from_z
from .moran import MoranResult, moran_moments, moran_of_regression, standardized_moran
from .simulate import DGPConfig, MonteCarloRow, emit_table, gen_draw, main_grid, run_experiment
from .swm import (
    EigenBasis,
    Normalization,
    SpatialWeights,
    build_distance_cutoff,
    generate_small_world,
    normalize_max_row_sum,
    spectral_decompose,
)

__all__ = [
    "DGPConfig", "EigenBasis", "FirstStageDiagnostics", "FitResult", "LassoFit", "LassoProblem",
    "Mi2SLConfig", "Mi2SLError", "Mi2SLFit", "MonteCarloRow", "MoranResult", "Normalization",
    "NumericalError", "RegressionData", "SpatialWeights", "ValidationError", "Variant",
    "build_distance_cutoff", "candidate_eigenvectors", "emit_table", "first_stage_f", "fit_mi2sl",
    "fit_partial_lasso", "format_counts", "gen_draw", "generate_small_world", "lambda_max",
    "main_grid", "moran_moments", "moran_of_regression", "normalize_max_row_sum", "ols",
    "plain_tsls", "post_lasso", "run_experiment", "selection_counts", "spectral_decompose",
    "standardized_moran", "tsls", "tsls_sar", "tuning_from_z",
]
