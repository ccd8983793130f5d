"""
Exception hierarchy for the Kolmogorov lab.

Domain and configuration errors are input problems (CLI exit code 2);
everything under NumericalFailure is a failed computation (exit code 3).
"""

from typing import List, Optional


class KolmogorovLabError(Exception):
    """Base class for all lab errors."""


class DomainError(KolmogorovLabError, ValueError):
    """Input outside the domain of an operation."""


class ConfigurationError(KolmogorovLabError, ValueError):
    """Invalid experiment configuration."""

    def __init__(self, message: str, keys: Optional[List[str]] = None):
        self.keys = list(keys or [])
        if self.keys:
            message = f"{message} (offending keys: {', '.join(self.keys)})"
        super().__init__(message)


class NumericalFailure(KolmogorovLabError, RuntimeError):
    """A computation did not produce a trustworthy result."""


class StepUnderflowError(NumericalFailure):
    """Step halving exhausted before the drift tolerance was met."""

    def __init__(self, message: str, achieved_drift: float):
        self.achieved_drift = achieved_drift
        super().__init__(f"{message} (achieved drift {achieved_drift:.3e})")


class BlowUpError(NumericalFailure):
    """State became non-finite or exceeded the blow-up norm."""

    def __init__(self, message: str, time: float):
        self.time = time
        super().__init__(f"{message} at t={time:.6g}")


class CoverageError(NumericalFailure):
    """A Brownian path does not cover the requested time window."""


class ConvergenceError(NumericalFailure):
    """A return, root or limit was not found within its horizon."""


class DiagnosticMismatch(NumericalFailure):
    """Analytic classification disagrees with the numerical check."""


def exit_code_for(error: BaseException) -> int:
    """Map an exception to the CLI exit code."""
    if isinstance(error, NumericalFailure):
        return 3
    if isinstance(error, (DomainError, ConfigurationError, ValueError)):
        return 2
    return 1
