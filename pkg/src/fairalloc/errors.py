"""Exception types raised across the package."""


class FairAllocError(Exception):
    """Base class for all package errors."""


class DegenerateVariance(FairAllocError):
    """The aggregate P&L has zero sample (or model) variance."""


class NoConvergence(FairAllocError):
    pass


class InvalidN(FairAllocError, ValueError):
    pass


class CorruptCache(FairAllocError):
    pass


class ShapeMismatch(FairAllocError, ValueError):
    pass


class FactorizationFailure(FairAllocError, ValueError):
    """Covariance matrix is not positive semidefinite within tolerance."""


class EstimatorFailure(FairAllocError):
    """An estimator failed on one day of a rolling run."""

    def __init__(self, day, cause):
        self.day = day
        self.cause = cause
        super().__init__(f"estimator failed on day {day}: {cause}")


class ParseError(FairAllocError, ValueError):
    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(f"{message}{suffix}")


class MissingValue(ParseError):
    pass


class NonMonotoneDates(ParseError):
    pass


class BoundaryOutOfRange(FairAllocError, ValueError):
    pass


class IndexOutOfRange(FairAllocError, IndexError):
    pass
