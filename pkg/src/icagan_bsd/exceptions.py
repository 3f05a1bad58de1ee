"""Exception types raised across the package."""

from sklearn.exceptions import NotFittedError

__all__ = ["ShapeError", "DataError", "NumericalError", "ConvergenceError", "NotFittedError"]


class ShapeError(ValueError):
    """Array dimensions do not match what an operation expects."""


class DataError(ValueError):
    """Input data violates a precondition (too short, out of range, ...)."""


class NumericalError(ArithmeticError):
    """A computation produced non-finite values or failed to converge."""


class ConvergenceError(NumericalError):
    pass
