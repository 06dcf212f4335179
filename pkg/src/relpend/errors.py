"""Exception types shared across the package."""

from __future__ import annotations


class DomainError(ValueError):
    """An argument lies outside the domain where an operation is defined."""


class IntegrationError(RuntimeError):
    """The adaptive integrator could not reach the final time."""

    def __init__(self, message: str, last_time: float):
        super().__init__(f"{message} (last good time t={last_time!r})")
        self.last_time = last_time


class InfeasibleError(RuntimeError):
    """A boundary-value problem has no solution in the searched range."""


class ConvergenceError(RuntimeError):
    """An iterative solver stopped before meeting its tolerance."""

    def __init__(self, message: str, best_residual: float, best=None):
        super().__init__(f"{message} (best residual {best_residual:.3e})")
        self.best_residual = best_residual
        self.best = best


class ConfigError(ValueError):
    """Invalid run configuration; carries every violation found."""

    def __init__(self, violations: list[str]):
        super().__init__("\n".join(violations))
        self.violations = list(violations)
