"""Moran's I two-stage Lasso: eigenvector selection in both stages, then 2SLS."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ._linalg import as_matrix
from .errors import (
    DegenerateResidualsError,
    DimensionMismatchError,
    InvalidParameterError,
    SelectionOverflowError,
)
from .estim import FirstStageDiagnostics, FitResult, first_stage_f, tsls
from .lasso import Z_FLOOR, LassoFit, LassoProblem, fit_partial_lasso, lambda_max, post_lasso, tuning_from_z
from .moran import MoranResult, moran_of_regression
from .swm import EigenBasis, SpatialWeights

CONSTANT_VECTOR_VAR = 1e-12
# Multiplier on 1/z^2 in the unscaled Lasso objective. With 1.0 almost every
# eigenvector survives at moderate spatial correlation and the final 2SLS
# often runs out of degrees of freedom; see README for the calibration.
DEFAULT_PENALTY_SCALE = 50.0


class Variant(str, Enum):
    LASSO = "lasso_fitted"
    POST_LASSO = "post_lasso_fitted"

    @property
    def label(self) -> str:
        return "Mi-2SLl" if self is Variant.LASSO else "Mi-2SLpl"


@dataclass(frozen=True, eq=False)
class RegressionData:
    """Outcome, exogenous block, one endogenous regressor and excluded instruments."""

    y: np.ndarray
    X1: np.ndarray
    x2: np.ndarray
    Z2: np.ndarray
    x1_names: list[str] | None = None
    x2_name: str = "x2"
    z2_names: list[str] | None = None

    def __post_init__(self) -> None:
        y = np.asarray(self.y, dtype=np.float64).ravel()
        n = y.size
        x2 = np.asarray(self.x2, dtype=np.float64).ravel()
        if x2.size != n:
            raise DimensionMismatchError(f"x2 has {x2.size} rows, y has {n}")
        X1 = as_matrix(self.X1, n) if np.size(self.X1) else np.zeros((n, 0))
        Z2 = as_matrix(self.Z2, n)
        if Z2.shape[1] < 1:
            raise InvalidParameterError("at least one excluded instrument is required")
        for name, arr in (("y", y), ("X1", X1), ("x2", x2), ("Z2", Z2)):
            if not np.all(np.isfinite(arr)):
                raise InvalidParameterError(f"{name} contains non-finite values")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x2", x2)
        object.__setattr__(self, "X1", X1)
        object.__setattr__(self, "Z2", Z2)
        if self.x1_names is None:
            object.__setattr__(self, "x1_names", [f"x1_{j}" for j in range(X1.shape[1])] if X1.shape[1] != 1 else ["x1"])
        if self.z2_names is None:
            object.__setattr__(self, "z2_names", [f"z2_{j}" for j in range(Z2.shape[1])] if Z2.shape[1] != 1 else ["z2"])

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def k1(self) -> int:
        return self.X1.shape[1]

    @property
    def q(self) -> int:
        return self.Z2.shape[1]


@dataclass(frozen=True)
class Mi2SLConfig:
    variant: Variant = Variant.LASSO
    include_intercept: bool = True
    lasso_tol: float = 1e-8
    lasso_max_iter: int = 100_000
    standardize_eigenvectors: bool = False
    penalty_scale: float = DEFAULT_PENALTY_SCALE
    # testing hook: use a lambda above lambda_max in both selection steps
    force_lambda_max: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", Variant(self.variant))
        if not self.lasso_tol > 0 or self.lasso_max_iter < 1:
            raise InvalidParameterError("lasso_tol must be positive and lasso_max_iter >= 1")
        if not (math.isfinite(self.penalty_scale) and self.penalty_scale > 0):
            raise InvalidParameterError(f"penalty_scale must be positive, got {self.penalty_scale}")


@dataclass(frozen=True, eq=False)
class Mi2SLFit:
    final: FitResult
    z_first: float
    z_second: float
    selected_first: list[int]
    selected_second: list[int]
    selected_union: list[int]
    first_stage: FirstStageDiagnostics
    config: Mi2SLConfig
    moran_first: MoranResult | None = None
    moran_second: MoranResult | None = None
    lambda_first: float = math.nan
    lambda_second: float = math.nan
    candidates: list[int] = field(default_factory=list)
    x2_index: int = 0

    @property
    def beta2(self) -> float:
        return float(self.final.coefs[self.x2_index])

    def beta2_se(self, robust: bool = False) -> float:
        return float(self.final.se(robust)[self.x2_index])


def candidate_eigenvectors(basis: EigenBasis) -> np.ndarray:
    """Indices of eigenvectors that are not numerically constant."""
    var = basis.eigenvectors.var(axis=0)
    return np.flatnonzero(var >= CONSTANT_VECTOR_VAR)


def _select(
    response: np.ndarray,
    unpenalized: np.ndarray,
    E: np.ndarray,
    z: float,
    cfg: Mi2SLConfig,
) -> tuple[LassoFit, LassoProblem]:
    if cfg.force_lambda_max:
        lam = max(1.01 * lambda_max(response, unpenalized, E), np.finfo(float).tiny)
    else:
        lam = tuning_from_z(z, response, unpenalized, E)
        if abs(z) >= Z_FLOOR:
            lam *= cfg.penalty_scale
    problem = LassoProblem(response, unpenalized, E, lam)
    fit = fit_partial_lasso(problem, cfg.lasso_tol, cfg.lasso_max_iter, standardize=cfg.standardize_eigenvectors)
    return fit, problem


def _check_z(z: float, step: str) -> None:
    if not math.isfinite(z):
        raise DegenerateResidualsError(f"standardised Moran's I in {step} is not finite")


def fit_mi2sl(
    data: RegressionData,
    basis: EigenBasis,
    w: SpatialWeights,
    cfg: Mi2SLConfig | None = None,
) -> Mi2SLFit:
    """Run the six Mi-2SL steps.

    Standard errors of the final 2SLS treat the selected eigenvectors as fixed
    controls.
    """
    cfg = cfg or Mi2SLConfig()
    n = data.n
    if w.n != n or basis.n != n:
        raise DimensionMismatchError(f"data have {n} rows, weights {w.n}, eigenbasis {basis.n}")
    const = np.ones((n, 1)) if cfg.include_intercept else np.zeros((n, 0))
    d_int = const.shape[1]
    if n - (d_int + data.k1 + data.q) - 2 <= 0:
        raise InvalidParameterError("too few observations for the first-stage Moran statistic")

    # (1) candidate set
    cand = candidate_eigenvectors(basis)
    E = basis.eigenvectors[:, cand]

    # (2) naive first stage Moran's I
    H = np.hstack([const, data.X1, data.Z2])
    moran_x = moran_of_regression(data.x2, H, w)
    _check_z(moran_x.z, "the first stage")

    # (3) first-stage selection
    fit_x, prob_x = _select(data.x2, H, E, moran_x.z, cfg)
    sel_x = sorted(int(cand[j]) for j in fit_x.active_set)
    if cfg.variant is Variant.LASSO:
        x2_hat = fit_x.fitted
    else:
        x2_hat = post_lasso(prob_x, fit_x.active_set).fitted

    # (4) naive second stage Moran's I with the fitted endogenous regressor
    X_hat = np.hstack([const, data.X1, x2_hat[:, None]])
    moran_y = moran_of_regression(data.y, X_hat, w)
    _check_z(moran_y.z, "the second stage")

    # (5) second-stage selection
    fit_y, _ = _select(data.y, X_hat, E, moran_y.z, cfg)
    sel_y = sorted(int(cand[j]) for j in fit_y.active_set)

    # (6) 2SLS with the union as exogenous controls
    union = sorted(set(sel_x) | set(sel_y))
    limit = n - data.k1 - data.q - 2
    if len(union) >= limit:
        raise SelectionOverflowError(f"{len(union)} eigenvectors selected; the final 2SLS allows fewer than {limit}")
    E_sel = basis.eigenvectors[:, union]
    X = np.hstack([const, data.X1, data.x2[:, None], E_sel])
    Z = np.hstack([const, data.X1, data.Z2, E_sel])
    names = (["const"] if d_int else []) + list(data.x1_names) + [data.x2_name] + [f"ev{j}" for j in union]
    final = tsls(data.y, X, Z, names)
    diag = first_stage_f(data.x2, np.hstack([const, data.X1, E_sel]), data.Z2, data.z2_names)

    return Mi2SLFit(
        final=final,
        z_first=moran_x.z,
        z_second=moran_y.z,
        selected_first=sel_x,
        selected_second=sel_y,
        selected_union=union,
        first_stage=diag,
        config=cfg,
        moran_first=moran_x,
        moran_second=moran_y,
        lambda_first=fit_x.lam,
        lambda_second=fit_y.lam,
        candidates=[int(j) for j in cand],
        x2_index=d_int + data.k1,
    )


def plain_tsls(data: RegressionData, include_intercept: bool = True) -> tuple[FitResult, FirstStageDiagnostics]:
    """2SLS of y on [1, X1, x2] with instruments [1, X1, Z2], no eigenvectors."""
    n = data.n
    const = np.ones((n, 1)) if include_intercept else np.zeros((n, 0))
    X = np.hstack([const, data.X1, data.x2[:, None]])
    Z = np.hstack([const, data.X1, data.Z2])
    names = (["const"] if include_intercept else []) + list(data.x1_names) + [data.x2_name]
    fit = tsls(data.y, X, Z, names)
    diag = first_stage_f(data.x2, np.hstack([const, data.X1]), data.Z2, data.z2_names)
    return fit, diag


def selection_counts(fit: Mi2SLFit) -> tuple[int, int, int]:
    return len(fit.selected_first), len(fit.selected_second), len(fit.selected_union)


def format_counts(fit: Mi2SLFit) -> str:
    """Selection counts as ``union[first,second]``."""
    a, b, c = selection_counts(fit)
    return f"{c}[{a},{b}]"

