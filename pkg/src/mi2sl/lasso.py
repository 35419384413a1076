"""Partially penalised Lasso and post-Lasso refit.

The objective is the unscaled

    ||y - D b - E g||_2^2 + lam * ||g||_1

with ``b`` unpenalised. There is no 1/n or 1/2 factor: ``lam`` enters the
soft-threshold as ``lam / 2`` against the raw inner products ``e_j' r``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numba
import numpy as np

from ._linalg import as_matrix, column_rank, pivoted_qr
from .errors import DimensionMismatchError, InvalidParameterError, RankDeficiencyError

log = logging.getLogger(__name__)

Z_FLOOR = 1e-4
LAMBDA_MAX_MARGIN = 1.01
_NULL_COLUMN_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class LassoProblem:
    response: np.ndarray
    unpenalized: np.ndarray
    penalized: np.ndarray
    lam: float

    def __post_init__(self) -> None:
        y = np.asarray(self.response, dtype=np.float64).ravel()
        n = y.size
        try:
            D = as_matrix(self.unpenalized, n)
            E = as_matrix(self.penalized, n)
        except DimensionMismatchError as exc:
            raise DimensionMismatchError(f"lasso problem: {exc}") from exc
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise InvalidParameterError(f"lasso tuning parameter must be positive, got {self.lam}")
        object.__setattr__(self, "response", y)
        object.__setattr__(self, "unpenalized", D)
        object.__setattr__(self, "penalized", E)

    @property
    def n(self) -> int:
        return self.response.size

    def objective(self, b: np.ndarray, g: np.ndarray) -> float:
        r = self.response - self.unpenalized @ b - self.penalized @ g
        return float(r @ r + self.lam * np.abs(g).sum())


@dataclass(frozen=True, eq=False)
class LassoFit:
    unpenalized_coefs: np.ndarray
    penalized_coefs: np.ndarray
    active_set: list[int]
    lam: float
    iterations: int
    converged: bool
    fitted: np.ndarray
    objective_value: float
    residuals: np.ndarray
    dropped: list[int] = field(default_factory=list)

    @property
    def rss(self) -> float:
        return float(self.residuals @ self.residuals)


def _partial_out(problem: LassoProblem) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Orthonormal basis of D plus M_D y and M_D E."""
    q = pivoted_qr(problem.unpenalized, "unpenalized block").q
    y = problem.response
    E = problem.penalized
    y_t = y - q @ (q.T @ y)
    E_t = E - q @ (q.T @ E)
    return q, y_t, E_t


def lambda_max(response, unpenalized, penalized) -> float:
    """Smallest tuning parameter at which every penalised coefficient is zero."""
    y = np.asarray(response, dtype=np.float64).ravel()
    D = as_matrix(unpenalized, y.size)
    E = as_matrix(penalized, y.size)
    if E.shape[1] == 0:
        return 0.0
    q = pivoted_qr(D, "unpenalized block").q
    y_t = y - q @ (q.T @ y)
    return float(2.0 * np.max(np.abs(E.T @ y_t)))


def tuning_from_z(z: float, response=None, unpenalized=None, penalized=None) -> float:
    """Tuning parameter ``1/z^2``.

    For ``|z| < Z_FLOOR`` the problem data must be supplied and a value just
    above :func:`lambda_max` is returned, so nothing is selected.
    """
    if abs(z) >= Z_FLOOR:
        return 1.0 / (z * z)
    if response is None or unpenalized is None or penalized is None:
        raise InvalidParameterError("|z| below floor: problem data needed for the full-shrinkage value")
    lmax = lambda_max(response, unpenalized, penalized)
    return max(LAMBDA_MAX_MARGIN * lmax, np.finfo(float).tiny)


@numba.njit(cache=True)
def _cd_gram(G, c, lam, tol, max_iter, track, gamma):
    """Cyclic coordinate descent on 0.5*g'Gg - c'g scaled to the unscaled objective.

    Minimises g'Gg - 2c'g + lam*|g|_1, updating ``gamma`` in place. ``grad``
    holds c - G g. Returns (iterations, converged, objective trace).
    """
    p = c.size
    half = 0.5 * lam
    grad = c - G @ gamma
    trace = np.empty(max_iter + 1 if track else 1)
    if track:
        trace[0] = gamma @ (G @ gamma) - 2.0 * (c @ gamma) + lam * np.abs(gamma).sum()
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        max_delta = 0.0
        for j in range(p):
            gjj = G[j, j]
            old = gamma[j]
            if gjj <= 0.0:
                new = 0.0
            else:
                rho = grad[j] + gjj * old
                if rho > half:
                    new = (rho - half) / gjj
                elif rho < -half:
                    new = (rho + half) / gjj
                else:
                    new = 0.0
            delta = new - old
            if delta != 0.0:
                gamma[j] = new
                for i in range(p):
                    grad[i] -= delta * G[i, j]
                ad = abs(delta)
                if ad > max_delta:
                    max_delta = ad
        if track:
            trace[it] = gamma @ (G @ gamma) - 2.0 * (c @ gamma) + lam * np.abs(gamma).sum()
        if max_delta < tol:
            converged = True
            break
    return it, converged, trace[: it + 1] if track else trace


def fit_partial_lasso(
    problem: LassoProblem,
    tol: float = 1e-8,
    max_iter: int = 100_000,
    standardize: bool = False,
    debug: bool = False,
) -> LassoFit:
    """Jointly minimise the partially penalised objective.

    The unpenalised block is profiled out exactly (its least-squares update
    is applied after every coordinate step), leaving a plain Lasso in the
    partialled-out eigenvector columns. Coordinates are swept in column order
    from a zero start. ``standardize`` rescales penalised columns to unit
    sample standard deviation before penalising and maps coefficients back.

    With ``debug`` the objective is recorded after every sweep and checked
    to be non-increasing.
    """
    if tol <= 0 or max_iter < 1:
        raise InvalidParameterError("tol must be positive and max_iter at least 1")
    q, y_t, E_t = _partial_out(problem)
    p = E_t.shape[1]
    scale = np.ones(p)
    if standardize and p:
        sd = problem.penalized.std(axis=0)
        scale = np.where(sd > 0, 1.0 / np.where(sd > 0, sd, 1.0), 1.0)
        E_t = E_t * scale

    G = E_t.T @ E_t
    c = E_t.T @ y_t
    # columns lying in the span of D carry no information; pin them at zero
    null_cols = np.diag(G) <= _NULL_COLUMN_TOL * np.maximum(1.0, (problem.penalized**2).sum(axis=0) * scale**2)
    G[null_cols, :] = 0.0
    G[:, null_cols] = 0.0
    c[null_cols] = 0.0

    gamma_s = np.zeros(p)
    if p:
        iterations, converged, trace = _cd_gram(G, c, float(problem.lam), float(tol), int(max_iter), debug, gamma_s)
    else:
        iterations, converged, trace = 0, True, np.zeros(1)
    if debug and trace.size > 1:
        assert np.all(np.diff(trace) <= 1e-9 * max(1.0, abs(trace[0]))), "objective increased"
    if not converged:
        log.warning("partial lasso hit max_iter=%d before converging (tol=%g)", max_iter, tol)

    gamma = gamma_s * scale
    r = problem.response - problem.penalized @ gamma
    b = pivoted_qr(problem.unpenalized, "unpenalized block").solve(r) if problem.unpenalized.shape[1] else np.zeros(0)
    fitted = problem.unpenalized @ b + problem.penalized @ gamma
    active = [int(j) for j in np.flatnonzero(gamma != 0.0)]
    resid = problem.response - fitted
    obj = float(resid @ resid + problem.lam * np.abs(gamma).sum())
    return LassoFit(b, gamma, active, float(problem.lam), int(iterations), bool(converged), fitted, obj, resid)


def _keep_independent(D: np.ndarray, E: np.ndarray, active: list[int]) -> tuple[list[int], list[int]]:
    """Greedily keep active columns that add rank; later-indexed offenders are dropped."""
    kept: list[int] = []
    dropped: list[int] = []
    base = D
    rank = column_rank(base) if base.shape[1] else 0
    for j in active:
        trial = np.hstack([base, E[:, [j]]])
        r = column_rank(trial)
        if r > rank:
            kept.append(j)
            base, rank = trial, r
        else:
            dropped.append(j)
    return kept, dropped


def post_lasso(problem: LassoProblem, active_set) -> LassoFit:
    """OLS refit on the unpenalised block plus the selected penalised columns."""
    active = sorted(int(j) for j in active_set)
    D, E, y = problem.unpenalized, problem.penalized, problem.response
    if any(j < 0 or j >= E.shape[1] for j in active):
        raise InvalidParameterError("active set index out of range")
    if D.shape[1] and column_rank(D) < D.shape[1]:
        raise RankDeficiencyError("unpenalized block is rank deficient")
    X = np.hstack([D, E[:, active]])
    dropped: list[int] = []
    if X.shape[1] and column_rank(X) < X.shape[1]:
        active, dropped = _keep_independent(D, E, active)
        log.info("post-lasso dropped collinear columns %s", dropped)
        X = np.hstack([D, E[:, active]])
    coefs = pivoted_qr(X, "post-lasso design").solve(y) if X.shape[1] else np.zeros(0)
    d = D.shape[1]
    gamma = np.zeros(E.shape[1])
    gamma[active] = coefs[d:]
    b = coefs[:d]
    fitted = X @ coefs if X.shape[1] else np.zeros_like(y)
    resid = y - fitted
    obj = float(resid @ resid + problem.lam * np.abs(gamma).sum())
    act = [int(j) for j in np.flatnonzero(gamma != 0.0)]
    return LassoFit(b, gamma, act, float(problem.lam), 0, True, fitted, obj, resid, dropped)
