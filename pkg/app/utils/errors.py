"""Exception hierarchy shared by the library, the CLI and the HTTP surface.

Every error carries an ``exit_code``: 2 for usage/validation problems, 1 for
numerical or fit failures.
"""

from typing import Optional, Sequence


class ImputationError(Exception):
    """Base class for all imputation engine errors."""

    exit_code: int = 1

    def __init__(self, message: str, detail: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.detail = detail


class ValidationFailure(ImputationError):
    """Input rejected before any numerical work."""

    exit_code = 2


class AllMissing(ValidationFailure):
    """A row has no observed entry."""


class DimensionMismatch(ValidationFailure):
    """Array shapes or index sets do not agree."""


class EmptyColumn(ValidationFailure):
    """A column has no observed value."""


class InfeasibleMask(ValidationFailure):
    """Missingness constraints could not be met after the allowed redraws."""


class DatasetFormatError(ValidationFailure):
    """CSV or model JSON could not be parsed."""


class InsufficientObserved(ValidationFailure):
    """Rows with missing entries must keep at least three observed cells."""

    def __init__(self, rows: Sequence[int], min_observed: int = 3):
        self.rows = [int(r) for r in rows]
        shown = ", ".join(str(r) for r in self.rows[:20])
        if len(self.rows) > 20:
            shown += f", ... ({len(self.rows)} rows)"
        super().__init__(
            f"rows with missing entries need at least {min_observed} observed cells",
            detail=f"offending rows: {shown}" if self.rows else None,
        )


class NotPositiveDefinite(ImputationError):
    """Cholesky factorization hit a non-positive pivot."""


class NoInteriorMaximum(ImputationError):
    """The profile t^{m/2} g(t) is monotone over the search interval."""


class DegenerateClustering(ImputationError):
    """K-means produced fewer than K nonempty clusters."""


class FitDiverged(ImputationError):
    """A mixture component collapsed during fitting."""

    def __init__(self, iteration: int, reason: str):
        self.iteration = iteration
        super().__init__(f"fit diverged at iteration {iteration}", detail=reason)


class SelectionFailed(ImputationError):
    """Every candidate K diverged during model selection."""


class ZeroTruth(ImputationError):
    """MAPE is undefined when a truth value is zero."""
