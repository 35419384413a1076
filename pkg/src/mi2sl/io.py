"""CSV readers and writers for weights matrices, coordinates and datasets.

Row order is unit identity: row i of a data file is unit i of the weights
matrix. Identifier columns are carried along for reporting only.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatchError, ValidationError
from .swm import Normalization, Provenance, SpatialWeights

MISSING_TOKENS = {"", "na", "nan", "null", "none", "."}
ID_COLUMNS = ("id",)


class ParseError(ValidationError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    columns: list[str]
    values: dict[str, np.ndarray]
    ids: list[str] | None = None

    @property
    def n(self) -> int:
        return next(iter(self.values.values())).size if self.values else 0

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[name]
        except KeyError:
            raise ValidationError(f"column {name!r} not found; available: {', '.join(self.columns)}") from None

    def matrix(self, names: list[str]) -> np.ndarray:
        if not names:
            return np.zeros((self.n, 0))
        return np.column_stack([self.column(c) for c in names])


def read_dataset(path: str | Path, required: list[str] | None = None) -> Dataset:
    """Strictly parse a headed CSV of numeric columns (an ``id`` column may be text)."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: file is empty") from None
        if len(set(header)) != len(header):
            raise ParseError(f"{path}: duplicate column names in header")
        missing_cols = [c for c in (required or []) if c not in header]
        if missing_cols:
            raise ParseError(f"{path}: missing column(s) {', '.join(missing_cols)}")
        rows = [r for r in reader if r and any(cell.strip() for cell in r)]

    id_idx = next((i for i, h in enumerate(header) if h.lower() in ID_COLUMNS), None)
    numeric = [i for i in range(len(header)) if i != id_idx]
    data = {header[i]: np.empty(len(rows)) for i in numeric}
    ids: list[str] | None = [] if id_idx is not None else None
    missing_rows: list[int] = []
    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise ParseError(f"{path}: data row {r} has {len(row)} fields, header has {len(header)}")
        if ids is not None:
            ids.append(row[id_idx].strip())
        for i in numeric:
            cell = row[i].strip()
            if cell.lower() in MISSING_TOKENS:
                missing_rows.append(r)
                data[header[i]][r - 1] = math.nan
                continue
            try:
                val = float(cell)
            except ValueError:
                raise ParseError(f"{path}: non-numeric value {cell!r} in row {r}, column {header[i]!r}") from None
            if not math.isfinite(val):
                raise ParseError(f"{path}: non-finite value {cell!r} in row {r}, column {header[i]!r}")
            data[header[i]][r - 1] = val
    if missing_rows:
        uniq = sorted(set(missing_rows))
        raise ParseError(f"{path}: missing values in data row(s) {', '.join(map(str, uniq))}")
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return Dataset([header[i] for i in numeric], data, ids)


def read_coords(path: str | Path) -> np.ndarray:
    """(lat, lon) pairs from a headed CSV with ``lat`` and ``lon`` columns."""
    ds = read_dataset(path, required=["lat", "lon"])
    return np.column_stack([ds.column("lat"), ds.column("lon")])


def write_swm(w: SpatialWeights | np.ndarray, path: str | Path) -> None:
    """Headerless n x n CSV with round-trip precision."""
    arr = w.weights if isinstance(w, SpatialWeights) else np.asarray(w)
    np.savetxt(path, arr, delimiter=",", fmt="%.17g")


def read_swm(path: str | Path, normalization: Normalization = Normalization.RAW) -> SpatialWeights:
    try:
        arr = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise ParseError(f"{path}: could not parse weights matrix: {exc}") from exc
    if arr.shape[0] != arr.shape[1]:
        raise ParseError(f"{path}: weights matrix is {arr.shape[0]}x{arr.shape[1]}, expected square")
    return SpatialWeights(arr, normalization, Provenance("user_supplied", {"path": str(path)}))


def check_alignment(ds: Dataset, w: SpatialWeights) -> None:
    if ds.n != w.n:
        raise DimensionMismatchError(f"data have {ds.n} rows but the weights matrix is {w.n}x{w.n}")


@dataclass(frozen=True)
class SwmSource:
    """Either a matrix CSV (``kind='matrix_file'``) or coordinates with a cutoff (``kind='coords'``)."""

    kind: str
    path: str
    cutoff_km: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("matrix_file", "coords"):
            raise ValidationError(f"unknown SWM source {self.kind!r}")
        if self.kind == "coords" and not (self.cutoff_km and self.cutoff_km > 0):
            raise ValidationError("a positive cutoff (km) is required with coordinates")


@dataclass(frozen=True)
class EstimationSpec:
    outcome: str
    endogenous: str
    instruments: list[str]
    exogenous: list[str] = field(default_factory=list)
    swm_source: SwmSource | None = None
    variant: str = "lasso_fitted"
    robust: bool = True

    def __post_init__(self) -> None:
        if not self.instruments:
            raise ValidationError("at least one instrument is required")
        names = [self.outcome, self.endogenous, *self.exogenous, *self.instruments]
        dup = {c for c in names if names.count(c) > 1}
        if dup:
            raise ValidationError(f"column(s) used in more than one role: {', '.join(sorted(dup))}")

    @property
    def columns(self) -> list[str]:
        return [self.outcome, self.endogenous, *self.exogenous, *self.instruments]


def ingest_csv(path: str | Path, spec: EstimationSpec) -> tuple[Dataset, np.ndarray | None]:
    """Read the data file for ``spec``; returns coordinates too when the file has lat/lon."""
    ds = read_dataset(path, required=spec.columns)
    coords = None
    if "lat" in ds.values and "lon" in ds.values:
        coords = np.column_stack([ds.values["lat"], ds.values["lon"]])
    return ds, coords
