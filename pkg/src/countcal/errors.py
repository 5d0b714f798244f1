"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: validation problems exit with 2,
numerical failures with 3.
"""

from __future__ import annotations


class CountcalError(Exception):
    """Base class for all package errors."""


class ValidationError(CountcalError, ValueError):
    """Input data or configuration violates a documented contract."""


class StructuralError(ValidationError):
    """Input files are individually well formed but mutually inconsistent."""


class NumericalError(CountcalError, ArithmeticError):
    """A numerical routine could not produce a finite answer."""


class IllConditionedError(NumericalError):
    """Cholesky factorization failed even after the full jitter ladder."""

    def __init__(self, message: str, jitter: float):
        super().__init__(f"{message} (final jitter {jitter:.3e})")
        self.jitter = jitter


class CalibrationError(NumericalError):
    """The MCMC sampler had to abort."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration
