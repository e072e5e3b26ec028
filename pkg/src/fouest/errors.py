"""Exception types shared across the package."""

from __future__ import annotations


class FouError(Exception):
    """Base class for all package errors."""


class ValidationError(FouError, ValueError):
    """An input violates a documented domain constraint."""


class QuadratureError(FouError, ArithmeticError):
    """The spectral integral could not be brought under the requested tolerance.

    ``achieved`` carries the best absolute error estimate reached.
    """

    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved error estimate {achieved:.3e})")
        self.achieved = achieved


class FactorizationError(FouError, ArithmeticError):
    """A covariance matrix could not be factorized for sampling."""


class ConvergenceError(FouError, ArithmeticError):
    """An iterative solver failed to converge."""


class IdentifiabilityError(FouError, ArithmeticError):
    """The forward map is (numerically) singular at the requested point."""
