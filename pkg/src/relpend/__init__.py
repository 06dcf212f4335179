"""Numerical laboratory for the periodically forced relativistic pendulum."""

from .errors import ConfigError, ConvergenceError, DomainError, InfeasibleError, IntegrationError
from .model import (
    Chart,
    ForcingSpec,
    ModelSpec,
    PhasePoint,
    PotentialSpec,
    chart_from_QP,
    chart_from_uv,
    chart_to_QP,
    chart_to_uv,
    eval_forcing,
    eval_potential,
    free_model,
    hamiltonian,
    legendre,
    pendulum,
    rescale_to_unit_period,
)

__version__ = "0.1.0"
