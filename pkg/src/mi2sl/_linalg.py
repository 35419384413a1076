"""QR-based least squares with an explicit rank check."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .errors import DimensionMismatchError, RankDeficiencyError

RANK_TOL = 1e-10


@dataclass(frozen=True)
class PivotedQR:
    q: np.ndarray
    r: np.ndarray
    piv: np.ndarray

    def solve(self, y: np.ndarray) -> np.ndarray:
        b = sla.solve_triangular(self.r, self.q.T @ y)
        out = np.empty_like(b)
        out[self.piv] = b
        return out

    def xtx_inv(self) -> np.ndarray:
        """(X'X)^-1 in the original column order."""
        r_inv = sla.solve_triangular(self.r, np.eye(self.r.shape[0]))
        inv_piv = r_inv @ r_inv.T
        p = self.piv.size
        out = np.empty((p, p))
        out[np.ix_(self.piv, self.piv)] = inv_piv
        return 0.5 * (out + out.T)


def pivoted_qr(x: np.ndarray, what: str = "design matrix") -> PivotedQR:
    """Economic QR with column pivoting; raises if the columns are rank deficient."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    n, k = x.shape
    if k == 0:
        return PivotedQR(np.zeros((n, 0)), np.zeros((0, 0)), np.zeros(0, dtype=int))
    if k > n:
        raise RankDeficiencyError(f"{what} has more columns ({k}) than rows ({n})")
    q, r, piv = sla.qr(x, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag[0] == 0.0 or np.any(diag < RANK_TOL * diag[0]):
        rank = int(np.sum(diag >= RANK_TOL * diag[0])) if diag[0] > 0 else 0
        raise RankDeficiencyError(f"{what} is rank deficient (rank {rank} < {k} columns)")
    return PivotedQR(q, r, piv)


def column_rank(x: np.ndarray) -> int:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] == 0:
        return 0
    r = sla.qr(x, mode="r", pivoting=True)[0]
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0.0:
        return 0
    return int(np.sum(diag >= RANK_TOL * diag[0]))


def as_matrix(a, n: int | None = None) -> np.ndarray:
    """Coerce a vector or matrix to a float64 2-D array with ``n`` rows."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2:
        raise ValueError("expected a vector or matrix")
    if n is not None and m.shape[0] != n:
        raise DimensionMismatchError(f"expected {n} rows, got {m.shape[0]}")
    return m
