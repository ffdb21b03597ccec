"""Exception types shared across the package.

The CLI maps these onto exit codes: ``DataValidationError`` -> 2,
``NumericalFailure`` -> 3.
"""


class DataValidationError(ValueError):
    """Input data violates a documented precondition."""


class ThresholdValidityError(DataValidationError):
    """Sample too small for the two-sample DKW bound with leading constant 2."""


class NumericalFailure(ArithmeticError):
    """A computation produced non-finite values (e.g. diverged training)."""
