"""Exceptions raised by the guardrail simulation toolkit.

Everything derives from ``ValueError`` so callers that only care about "bad input"
can keep catching that.
"""

from typing import Any, Optional


class GuardrailSimError(ValueError):
    """Base class for all toolkit errors."""


class ArgumentError(GuardrailSimError):
    """An argument is outside the range an operation accepts."""


class InvalidGuardrailError(GuardrailSimError):
    """A guardrail has its lower bound above its upper bound."""


class DomainError(GuardrailSimError):
    """A loss or sampler produced a non-finite value."""


class ConfigurationError(GuardrailSimError):
    """A model, loss or scenario file is missing something an operation needs."""


class ConvergenceError(GuardrailSimError):
    """Adaptive quadrature did not converge.

    The best estimate reached before giving up is kept on ``partial``.
    """

    def __init__(self, message: str, partial: Optional[Any] = None):
        super().__init__(message)
        self.partial = partial


class DegenerateDesignError(GuardrailSimError):
    """A least-squares design matrix is singular."""


class NonpositiveSlopeError(GuardrailSimError):
    """An estimated demand curve slopes upwards, so revenue has no finite maximizer."""


class HypothesisViolatedError(GuardrailSimError):
    """The inputs violate a hypothesis the requested result relies on."""


class ConditionInapplicableError(GuardrailSimError):
    """A closed-form improvement condition is undefined for these inputs."""
