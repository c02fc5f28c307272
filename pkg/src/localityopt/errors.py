"""Exception types raised across the package."""


class LocalityError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(LocalityError, ValueError):
    pass


class SingularSystemError(LocalityError):
    """A KKT or constraint system is rank deficient.

    ``rank_defect`` is the number of pivots that fell below tolerance
    (``None`` when the factorization failed outright).
    """

    def __init__(self, message, rank_defect=None):
        super().__init__(message)
        self.rank_defect = rank_defect


class ConvergenceError(LocalityError):
    pass


class CRBreakdown(ConvergenceError):
    """Conjugate residuals hit a near-zero inner product."""

    def __init__(self, message, iteration):
        super().__init__(message)
        self.iteration = iteration


class NoLocalityGuarantee(LocalityError, ValueError):
    """Raised when the locality rate is not strictly below one."""
