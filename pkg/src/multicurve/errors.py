"""Exception types shared across the package."""


class MulticurveError(Exception):
    """Base class for all package-specific errors."""


class NoYieldBracket(MulticurveError):
    """Yield-to-maturity root finding found no sign change in the search bracket."""


class IllConditioned(MulticurveError):
    """Symmetric positive-definite factorization of the pricing system failed.

    Carries ``smallest_pivot``, the most negative (or smallest) eigenvalue of
    the matrix that was handed to the factorization.
    """

    def __init__(self, message: str, smallest_pivot: float):
        super().__init__(f"{message} (smallest pivot {smallest_pivot:.6g})")
        self.smallest_pivot = smallest_pivot


class NonPositiveDiscount(MulticurveError):
    """A discount factor required to be positive was zero or negative."""


class ScaleUndefined(MulticurveError):
    """The likelihood scale has no maximizer (no instruments observed)."""


class ExperimentSkipped(MulticurveError):
    """An experiment's precondition on the data cross-section was violated."""
