"""Exception hierarchy.

Two families map onto CLI exit codes: :class:`ValidationError` (bad input,
exit 2) and :class:`NumericalError` (estimation failure, exit 3).
"""

from __future__ import annotations


class Mi2SLError(Exception):
    """Base class for all package errors."""


class ValidationError(Mi2SLError, ValueError):
    """Input failed a precondition before any computation."""


class NumericalError(Mi2SLError, ArithmeticError):
    """A numerical routine could not produce a valid result."""


class InvalidParameterError(ValidationError):
    pass


class DimensionMismatchError(ValidationError):
    pass


class IsolatedUnitError(ValidationError):
    """A distance-cutoff weights matrix has a unit without neighbours."""

    def __init__(self, rows: list[int], cutoff_km: float):
        self.rows = rows
        self.cutoff_km = cutoff_km
        preview = ", ".join(str(r) for r in rows[:10])
        more = "" if len(rows) <= 10 else f" (+{len(rows) - 10} more)"
        super().__init__(
            f"{len(rows)} unit(s) have no neighbour within {cutoff_km} km: rows {preview}{more}"
        )


class ZeroMatrixError(NumericalError):
    pass


class EigenConvergenceError(NumericalError):
    pass


class RankDeficiencyError(NumericalError):
    pass


class DegenerateResidualsError(NumericalError):
    pass


class NonPositiveVarianceError(NumericalError):
    pass


class IdentificationError(NumericalError):
    """Fewer instruments than regressors, or instruments uninformative."""


class SelectionOverflowError(NumericalError):
    """Too many eigenvectors selected to run the final 2SLS."""
