"""Exception and warning types raised across the package."""


class MultirankError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(MultirankError, ValueError):
    """An argument violates a documented precondition."""


class DomainError(MultirankError, ValueError):
    """A probability or grid coordinate lies outside the open unit cube."""


class EvaluationError(MultirankError, ValueError):
    """A weight function produced a non-finite value at a grid point."""


class DegenerateSampleError(MultirankError, ValueError):
    """A sample is too small or has zero spread where spread is required."""


class RankDeficiencyError(MultirankError, ValueError):
    """A Gram matrix that must be inverted is numerically singular.

    Attributes
    ----------
    rank : int
        Numerical rank of the offending matrix.
    """

    def __init__(self, message: str, rank: int):
        super().__init__(message)
        self.rank = rank


class DegenerateSpectrumError(MultirankError, ValueError):
    """Coincident exponents make the partial-fraction transform undefined."""


class BudgetExceededError(MultirankError, RuntimeError):
    """Exhaustive enumeration would exceed the subset budget."""


class PrecisionWarning(UserWarning):
    """A computation is running outside its validated precision range."""
