from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("guardrails-mcp")
except PackageNotFoundError:
    __version__ = "0.0.0"

from .errors import (
    ArgumentError,
    ConditionInapplicableError,
    ConfigurationError,
    ConvergenceError,
    DegenerateDesignError,
    DomainError,
    GuardrailSimError,
    HypothesisViolatedError,
    InvalidGuardrailError,
    NonpositiveSlopeError,
)
from .framework import benefit, clip, condition_report
from .mc_engine import EstimateWithCI, RngStream, estimate_mean, quadrature_1d, quadrature_2d
from .runner import ScenarioConfig, execute, run
from .verify import run_suite

__all__ = [
    "__version__",
    "ArgumentError",
    "ConditionInapplicableError",
    "ConfigurationError",
    "ConvergenceError",
    "DegenerateDesignError",
    "DomainError",
    "GuardrailSimError",
    "HypothesisViolatedError",
    "InvalidGuardrailError",
    "NonpositiveSlopeError",
    "benefit",
    "clip",
    "condition_report",
    "EstimateWithCI",
    "RngStream",
    "estimate_mean",
    "quadrature_1d",
    "quadrature_2d",
    "ScenarioConfig",
    "execute",
    "run",
    "run_suite",
]
