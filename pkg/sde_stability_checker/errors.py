"""Exception hierarchy shared by every module of the checker."""

from typing import Optional, final


class StabilityCheckError(Exception):
    """Base class for all errors raised by sde_stability_checker."""


@final
class DomainError(StabilityCheckError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


@final
class ConfigurationError(StabilityCheckError, ValueError):
    """Missing metadata or an invalid configuration entry.

    ``path`` names the offending field or the dotted key path inside a config file.
    """

    def __init__(self, message: str, path: Optional[str] = None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


@final
class PreconditionError(StabilityCheckError, ValueError):
    """An operation was called while its precondition does not hold."""


@final
class QuadratureError(StabilityCheckError, ArithmeticError):
    """A quadrature rule could not reach the requested tolerance."""
