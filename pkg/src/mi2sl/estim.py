"""OLS, 2SLS, HC1 covariance, first-stage F statistics and the SAR(1) 2SLS comparator."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from ._linalg import as_matrix, pivoted_qr
from .errors import DimensionMismatchError, IdentificationError, RankDeficiencyError
from .swm import SpatialWeights

F_CAP = 1e12
_PERFECT_FIT_RTOL = 1e-24


@dataclass(frozen=True, eq=False)
class FitResult:
    coefs: np.ndarray
    vcov_classical: np.ndarray
    vcov_robust: np.ndarray
    residuals: np.ndarray
    sigma2: float
    n: int
    p: int
    coef_names: list[str]

    def se(self, robust: bool = False) -> np.ndarray:
        v = self.vcov_robust if robust else self.vcov_classical
        return np.sqrt(np.clip(np.diag(v), 0.0, None))

    def index(self, name: str) -> int:
        return self.coef_names.index(name)

    def coef(self, name: str) -> float:
        return float(self.coefs[self.index(name)])

    def stderr(self, name: str, robust: bool = False) -> float:
        return float(self.se(robust)[self.index(name)])


@dataclass(frozen=True)
class FirstStageDiagnostics:
    f_full: float
    f_partial: float
    excluded_instrument_names: list[str] = field(default_factory=list)
    robust: bool = True
    perfect_fit: bool = False


def _names(names: Sequence[str] | None, p: int, prefix: str = "x") -> list[str]:
    if names is None:
        return [f"{prefix}{j}" for j in range(p)]
    names = list(names)
    if len(names) != p:
        raise DimensionMismatchError(f"got {len(names)} names for {p} columns")
    return names


def _hc1(bread: np.ndarray, scores_x: np.ndarray, resid: np.ndarray) -> np.ndarray:
    n, p = scores_x.shape
    xe = scores_x * resid[:, None]
    meat = xe.T @ xe
    v = (n / (n - p)) * bread @ meat @ bread
    return 0.5 * (v + v.T)


def ols(y, X, names: Sequence[str] | None = None) -> FitResult:
    """Least squares of ``y`` on ``X`` with classical and HC1 covariances."""
    y = np.asarray(y, dtype=np.float64).ravel()
    X = as_matrix(X, y.size)
    n, p = X.shape
    if n <= p:
        raise RankDeficiencyError(f"need more observations ({n}) than regressors ({p})")
    qr = pivoted_qr(X, "regressor matrix")
    coefs = qr.solve(y)
    resid = y - X @ coefs
    bread = qr.xtx_inv()
    sigma2 = float(resid @ resid / (n - p))
    return FitResult(
        coefs=coefs,
        vcov_classical=sigma2 * bread,
        vcov_robust=_hc1(bread, X, resid),
        residuals=resid,
        sigma2=sigma2,
        n=n,
        p=p,
        coef_names=_names(names, p),
    )


def tsls(y, X, Z, names: Sequence[str] | None = None) -> FitResult:
    """Two-stage least squares of ``y`` on ``X`` using instruments ``Z``.

    Residuals are structural, ``y - X @ coefs`` evaluated at the actual
    regressors. The HC1 meat uses the projected regressors ``P_Z X``.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    X = as_matrix(X, y.size)
    Z = as_matrix(Z, y.size)
    n, p = X.shape
    q = Z.shape[1]
    if q < p:
        raise IdentificationError(f"under-identified: {q} instruments for {p} regressors")
    if n <= q:
        raise RankDeficiencyError(f"need more observations ({n}) than instruments ({q})")
    qz = pivoted_qr(Z, "instrument matrix").q
    x_hat = qz @ (qz.T @ X)
    try:
        qr = pivoted_qr(x_hat, "projected regressor matrix")
    except RankDeficiencyError as exc:
        raise IdentificationError(f"instruments do not identify all regressors: {exc}") from exc
    coefs = qr.solve(y)
    resid = y - X @ coefs
    bread = qr.xtx_inv()
    sigma2 = float(resid @ resid / (n - p))
    return FitResult(
        coefs=coefs,
        vcov_classical=sigma2 * bread,
        vcov_robust=_hc1(bread, x_hat, resid),
        residuals=resid,
        sigma2=sigma2,
        n=n,
        p=p,
        coef_names=_names(names, p),
    )


def _wald_per_restriction(coefs: np.ndarray, vcov: np.ndarray, idx: np.ndarray) -> float:
    b = coefs[idx]
    v = vcov[np.ix_(idx, idx)]
    stat = float(b @ np.linalg.solve(v, b)) / idx.size
    return stat


def first_stage_f(
    x2,
    included,
    excluded,
    excluded_names: Sequence[str] | None = None,
    robust: bool = True,
) -> FirstStageDiagnostics:
    """Full and partial first-stage F statistics (Wald / number of restrictions).

    The full statistic tests every slope in the regression of ``x2`` on
    ``[included, excluded]``; constant columns of ``included`` are treated as
    intercepts and left untested. The partial statistic tests ``excluded``.
    """
    x2 = np.asarray(x2, dtype=np.float64).ravel()
    inc = as_matrix(included, x2.size)
    exc = as_matrix(excluded, x2.size)
    k, m = inc.shape[1], exc.shape[1]
    if m < 1:
        raise IdentificationError("at least one excluded instrument is required")
    fit = ols(x2, np.hstack([inc, exc]))
    names = _names(excluded_names, m, prefix="z")

    rss = float(fit.residuals @ fit.residuals)
    if rss <= _PERFECT_FIT_RTOL * float(x2 @ x2):
        return FirstStageDiagnostics(F_CAP, F_CAP, names, robust, perfect_fit=True)

    vcov = fit.vcov_robust if robust else fit.vcov_classical
    is_const = np.ptp(inc, axis=0) == 0 if k else np.zeros(0, dtype=bool)
    slopes = np.concatenate([np.flatnonzero(~is_const), k + np.arange(m)])
    f_full = _wald_per_restriction(fit.coefs, vcov, slopes)
    f_partial = _wald_per_restriction(fit.coefs, vcov, k + np.arange(m))
    return FirstStageDiagnostics(
        f_full=float(min(max(f_full, 0.0), F_CAP)),
        f_partial=float(min(max(f_partial, 0.0), F_CAP)),
        excluded_instrument_names=names,
        robust=robust,
    )


def tsls_sar(y, x1, x2, z2, w: SpatialWeights) -> FitResult:
    """2SLS of ``y`` on ``[1, Wy, x1, x2]`` with instruments ``[1, x1, Wx1, W^2x1, z2]``.

    Spatial lags of the covariates are deliberately left out of the
    structural equation.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    n = y.size
    if w.n != n:
        raise DimensionMismatchError(f"weights are {w.n}x{w.n} but data have {n} rows")
    X1 = as_matrix(x1, n)
    x2 = np.asarray(x2, dtype=np.float64).reshape(n, -1)
    Z2 = as_matrix(z2, n)
    W = w.weights
    one = np.ones((n, 1))
    wx1 = W @ X1
    X = np.hstack([one, (W @ y)[:, None], X1, x2])
    Z = np.hstack([one, X1, wx1, W @ wx1, Z2])
    k1 = X1.shape[1]
    names = ["const", "Wy"] + [f"x1_{j}" for j in range(k1)] + [f"x2_{j}" for j in range(x2.shape[1])]
    if k1 == 1:
        names[2] = "x1"
    if x2.shape[1] == 1:
        names[-1] = "x2"
    return tsls(y, X, Z, names)
