"""Exception hierarchy shared by all modules."""

__all__ = [
    "PrecodingError",
    "StructuralError",
    "NumericError",
    "DomainError",
    "InfeasibleTargetError",
    "InfeasibleConfigurationError",
    "ConvergenceError",
    "SweepError",
]


class PrecodingError(Exception):
    """Base class for every error raised by this package."""


class StructuralError(PrecodingError, ValueError):
    """Shapes or counts are inconsistent with the system configuration."""


class NumericError(PrecodingError, ArithmeticError):
    """A matrix is singular/ill-conditioned or a value is not finite.

    ``stream`` holds the offending stream index when one is known and
    ``state`` the last consistent solver state, if any.
    """

    def __init__(self, message, stream=None, state=None):
        super().__init__(message)
        self.stream = stream
        self.state = state


class DomainError(PrecodingError, ValueError):
    """An argument lies outside the domain of a formula."""


class InfeasibleTargetError(NumericError):
    """SINR targets cannot be met with nonnegative powers."""


class InfeasibleConfigurationError(PrecodingError):
    """The antenna configuration does not admit the requested scheme."""


class ConvergenceError(PrecodingError):
    """An iterative routine hit its iteration cap; ``best`` holds its best value."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class SweepError(PrecodingError):
    """Too many individual trials failed during a Monte Carlo sweep."""
