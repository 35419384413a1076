"""Standardised Moran's I of regression residuals with exact null moments."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from ._linalg import as_matrix, pivoted_qr
from .errors import (
    DegenerateResidualsError,
    DimensionMismatchError,
    InvalidParameterError,
    NonPositiveVarianceError,
)
from .swm import SpatialWeights

_PERFECT_FIT_RTOL = 1e-24


@dataclass(frozen=True)
class MoranResult:
    m: float
    expected_m: float
    variance_m: float
    z: float
    k: int
    n: int

    @property
    def p_value(self) -> float:
        """Two-sided normal p-value of ``z``."""
        return float(2.0 * stats.norm.sf(abs(self.z)))


def annihilator_residuals(target, regressors) -> tuple[np.ndarray, np.ndarray]:
    """Residuals of ``target`` after projecting out ``regressors``.

    Returns the residual vector and an orthonormal basis of the regressor
    column space (n x k). With no regressors the target is returned as is.
    """
    h = np.asarray(target, dtype=np.float64).ravel()
    X = as_matrix(regressors, h.size)
    q = pivoted_qr(X, "regressor matrix").q
    resid = h - q @ (q.T @ h)
    return resid, q


def _projected_weights(W: np.ndarray, q: np.ndarray) -> np.ndarray:
    """M W M with M = I - q q' for orthonormal q."""
    if q.shape[1] == 0:
        return W.copy()
    wq = W @ q
    a = W - q @ wq.T - wq @ q.T + q @ (q.T @ wq) @ q.T
    return 0.5 * (a + a.T)


def moran_moments(regressors, w: SpatialWeights) -> tuple[float, float, int]:
    """Null mean and variance of Moran's m for residuals of ``regressors``.

    Returns ``(expected_m, variance_m, k)``.
    """
    X = as_matrix(regressors, w.n)
    n, k = X.shape
    dof = n - k
    if dof - 2 <= 0:
        raise InvalidParameterError(f"Moran moments need n - k - 2 > 0 (n={n}, k={k})")
    q = pivoted_qr(X, "regressor matrix").q
    a = _projected_weights(w.weights, q)
    tr_a = float(np.trace(a))
    # a is symmetric, so tr(a @ a) is its squared Frobenius norm
    tr_a2 = float(np.sum(a * a))
    expected = tr_a / dof
    variance = 2.0 * (dof * tr_a2 - tr_a**2) / (dof**2 * (dof - 2))
    return expected, variance, k


def standardized_moran(residuals, regressors, w: SpatialWeights) -> MoranResult:
    """Standardised Moran's I, ``z = (m - E[m]) / sqrt(Var[m])``.

    ``regressors`` must be the matrix the residuals were computed from; pass
    an n x 0 array for raw (unprojected) vectors.
    """
    h = np.asarray(residuals, dtype=np.float64).ravel()
    if h.size != w.n:
        raise DimensionMismatchError(f"residuals have length {h.size}, weights are {w.n}x{w.n}")
    hh = float(h @ h)
    if not hh >= 1e-300:
        raise DegenerateResidualsError("residual vector is (numerically) zero")
    expected, variance, k = moran_moments(regressors, w)
    if not variance > 0.0:
        raise NonPositiveVarianceError(
            f"Moran variance is {variance:.3g}; the weights matrix may be degenerate"
        )
    m = float(h @ (w.weights @ h)) / hh
    z = (m - expected) / math.sqrt(variance)
    return MoranResult(m=m, expected_m=expected, variance_m=variance, z=z, k=k, n=h.size)


def moran_of_regression(target, regressors, w: SpatialWeights) -> MoranResult:
    """Moran statistic of the residuals of ``target`` on ``regressors``.

    A fit whose residual sum of squares is at rounding level relative to the
    target is rejected; its residuals carry no spatial information.
    """
    resid, _ = annihilator_residuals(target, regressors)
    t = np.asarray(target, dtype=np.float64).ravel()
    if float(resid @ resid) <= _PERFECT_FIT_RTOL * float(t @ t):
        raise DegenerateResidualsError("regressors fit the target exactly; residuals are rounding noise")
    return standardized_moran(resid, regressors, w)
