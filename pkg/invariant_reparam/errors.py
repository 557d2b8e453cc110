"""Exception taxonomy shared by the library and the CLI.

Validation problems (bad configuration, violated preconditions) map to exit code 1,
numerical failures to exit code 2.
"""

from __future__ import annotations

from typing import Optional


class IIRError(Exception):
    """Root of all errors raised by invariant_reparam."""

    exit_code = 2


class ConfigError(IIRError, ValueError):
    """Invalid run configuration, CLI flag or data file."""

    exit_code = 1

    def __init__(self, message: str, field: Optional[str] = None) -> None:
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class PreconditionError(IIRError, ValueError):
    """A library call received arguments outside its contract."""

    exit_code = 1


class NumericalError(IIRError, RuntimeError):
    """A numerical kernel could not produce a valid result."""

    exit_code = 2


class DomainError(NumericalError, ValueError):
    """log/sqrt received a non-positive argument."""


class IntegrationError(NumericalError):
    """The ODE state became non-finite."""

    def __init__(self, step: int, message: str = "non-finite state") -> None:
        self.step = step
        super().__init__(f"{message} at integration step {step}")


class SingularReparamError(NumericalError):
    """Rounded exponent matrix is not invertible."""


class OptimizationError(NumericalError):
    """No optimizer start produced a finite objective value."""


class EmptyBandError(NumericalError):
    """No profile node passed the confidence threshold."""
