"""Spatial weights matrices: construction, normalisation and spectral decomposition."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from enum import Enum
from typing import Any

import numba
import numpy as np

from .errors import (
    EigenConvergenceError,
    InvalidParameterError,
    IsolatedUnitError,
    ZeroMatrixError,
)

EARTH_RADIUS_KM = 6371.0

_FNV_OFFSET = np.uint64(0xCBF29CE484222325)
_FNV_PRIME = np.uint64(0x100000001B3)


class Normalization(str, Enum):
    RAW = "raw"
    MAX_ROW_SUM = "max_row_sum"


@dataclass(frozen=True)
class Provenance:
    """Where a weights matrix came from.

    ``kind`` is one of ``small_world``, ``distance_cutoff`` or ``user_supplied``;
    ``params`` holds the generator arguments.
    """

    kind: str
    params: dict[str, Any] = field(default_factory=dict)


@numba.njit(cache=True)
def _fnv1a64(data: np.ndarray) -> np.uint64:
    h = _FNV_OFFSET
    for b in data:
        h ^= np.uint64(b)
        h *= _FNV_PRIME
    return h


def checksum(weights: np.ndarray) -> str:
    """64-bit FNV-1a digest of the row-major float64 bytes, as 16 hex digits."""
    raw = np.ascontiguousarray(weights, dtype="<f8").view(np.uint8).ravel()
    return f"{int(_fnv1a64(raw)):016x}"


@dataclass(frozen=True, eq=False)
class SpatialWeights:
    """Symmetric, nonnegative, zero-diagonal n x n weights matrix."""

    weights: np.ndarray
    normalization: Normalization = Normalization.RAW
    provenance: Provenance = field(default_factory=lambda: Provenance("user_supplied"))

    def __post_init__(self) -> None:
        w = np.array(self.weights, dtype=np.float64, copy=True)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] < 1:
            raise InvalidParameterError(f"weights must be a square matrix, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise InvalidParameterError("weights contain non-finite entries")
        if np.any(np.diag(w) != 0.0):
            raise InvalidParameterError("weights must have a zero diagonal")
        if not np.array_equal(w, w.T):
            raise InvalidParameterError("weights must be exactly symmetric")
        if np.any(w < 0.0):
            raise InvalidParameterError("weights must be nonnegative")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "normalization", Normalization(self.normalization))

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @cached_property
    def checksum(self) -> str:
        return checksum(self.weights)

    def row_sums(self) -> np.ndarray:
        return self.weights.sum(axis=1)

    def lag(self, x: np.ndarray) -> np.ndarray:
        """Spatial lag ``W @ x``."""
        return self.weights @ x


@dataclass(frozen=True, eq=False)
class EigenBasis:
    """Orthonormal eigenvectors of a weights matrix, eigenvalues descending."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    source_checksum: str

    @property
    def n(self) -> int:
        return self.eigenvalues.shape[0]


def generate_small_world(n: int, k_neighbors: int, rewire_prob: float, seed: int) -> SpatialWeights:
    """Undirected Watts-Strogatz graph as a binary weights matrix.

    Each node starts linked to ``k_neighbors // 2`` nodes on either side of a
    ring. Every lattice edge (i, i+j) is then rewired with probability
    ``rewire_prob``: the far endpoint is replaced by a node drawn uniformly
    from the current non-neighbours of i. The edge count never changes.
    """
    if not isinstance(n, (int, np.integer)) or not isinstance(k_neighbors, (int, np.integer)):
        raise InvalidParameterError("n and k_neighbors must be integers")
    if k_neighbors < 2 or k_neighbors % 2 != 0:
        raise InvalidParameterError(f"k_neighbors must be even and >= 2, got {k_neighbors}")
    if k_neighbors >= n:
        raise InvalidParameterError(f"k_neighbors ({k_neighbors}) must be smaller than n ({n})")
    if not 0.0 <= rewire_prob <= 1.0:
        raise InvalidParameterError(f"rewire_prob must lie in [0, 1], got {rewire_prob}")

    rng = np.random.default_rng(seed)
    adj = np.zeros((n, n), dtype=bool)
    idx = np.arange(n)
    half = k_neighbors // 2
    for j in range(1, half + 1):
        adj[idx, (idx + j) % n] = True
        adj[(idx + j) % n, idx] = True

    for j in range(1, half + 1):
        for i in range(n):
            t = (i + j) % n
            if rng.random() >= rewire_prob:
                continue
            candidates = np.flatnonzero(~adj[i])
            candidates = candidates[candidates != i]
            if candidates.size == 0:
                continue
            new = candidates[rng.integers(candidates.size)]
            adj[i, t] = adj[t, i] = False
            adj[i, new] = adj[new, i] = True

    return SpatialWeights(
        adj.astype(np.float64),
        Normalization.RAW,
        Provenance("small_world", {"k_neighbors": int(k_neighbors), "rewire_prob": float(rewire_prob), "seed": int(seed)}),
    )


def haversine_matrix(coords: np.ndarray) -> np.ndarray:
    """Pairwise great-circle distances in km for (lat, lon) rows in degrees."""
    lat = np.radians(coords[:, 0])
    lon = np.radians(coords[:, 1])
    dlat = lat[:, None] - lat[None, :]
    dlon = lon[:, None] - lon[None, :]
    a = np.sin(dlat / 2) ** 2 + np.cos(lat)[:, None] * np.cos(lat)[None, :] * np.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def build_distance_cutoff(coords, cutoff_km: float) -> SpatialWeights:
    """Binary weights: w_ij = 1 when units i != j are closer than ``cutoff_km``."""
    c = np.asarray(coords, dtype=np.float64)
    if c.ndim != 2 or c.shape[1] != 2 or c.shape[0] < 2:
        raise InvalidParameterError("need at least two (lat, lon) pairs")
    if not np.all(np.isfinite(c)):
        raise InvalidParameterError("coordinates must be finite")
    if np.any(np.abs(c[:, 0]) > 90) or np.any(np.abs(c[:, 1]) > 180):
        raise InvalidParameterError("latitude must lie in [-90, 90] and longitude in [-180, 180]")
    if not cutoff_km > 0:
        raise InvalidParameterError(f"cutoff_km must be positive, got {cutoff_km}")

    d = haversine_matrix(c)
    w = (d < cutoff_km).astype(np.float64)
    np.fill_diagonal(w, 0.0)
    w = np.maximum(w, w.T)
    isolated = np.flatnonzero(w.sum(axis=1) == 0)
    if isolated.size:
        raise IsolatedUnitError(isolated.tolist(), cutoff_km)
    return SpatialWeights(w, Normalization.RAW, Provenance("distance_cutoff", {"cutoff_km": float(cutoff_km)}))


def normalize_max_row_sum(w: SpatialWeights) -> SpatialWeights:
    """Divide every entry by the largest row sum."""
    scale = w.row_sums().max()
    if scale <= 0:
        raise ZeroMatrixError("cannot normalise an all-zero weights matrix")
    return SpatialWeights(w.weights / scale, Normalization.MAX_ROW_SUM, w.provenance)


def _orient(vectors: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Flip columns so that the first non-negligible component is positive."""
    out = vectors.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        nz = np.flatnonzero(np.abs(col) > tol)
        if nz.size and col[nz[0]] < 0:
            out[:, j] = -col
    return out


def spectral_decompose(w: SpatialWeights) -> EigenBasis:
    """Full symmetric eigendecomposition, eigenvalues sorted descending."""
    try:
        vals, vecs = np.linalg.eigh(w.weights)
    except np.linalg.LinAlgError as exc:
        raise EigenConvergenceError(f"symmetric eigensolver did not converge: {exc}") from exc
    order = np.argsort(-vals, kind="stable")
    vals = vals[order]
    vecs = _orient(vecs[:, order])
    vals.setflags(write=False)
    vecs.setflags(write=False)
    return EigenBasis(vals, vecs, w.checksum)
