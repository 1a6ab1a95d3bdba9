"""
Exceptions raised by the stochastic map library
"""

from typing import Any, Optional


class StochasticMapError(Exception):
    """Base class for every error raised by stochmap"""
    def __init__(self, message: str):
        self.message = message
        super().__init__(self.message)


class InvalidValue(StochasticMapError):
    """Raised when a scalar or vector input is non-finite or out of range"""


class ShapeMismatch(StochasticMapError):
    """Raised when array shapes do not conform to an operation's contract"""


class ConventionMismatch(StochasticMapError):
    """Raised when 6-DOF poses with different angle conventions are combined"""


class SingularOrientation(StochasticMapError):
    """Raised when an orientation is too close to its parameterization singularity"""
    def __init__(self, message: str, margin: float = 0.0, threshold: float = 0.0):
        self.margin = margin
        self.threshold = threshold
        super().__init__(message)


class NumericalFailure(StochasticMapError):
    """Raised when a numerical evaluation produces NaN or Inf"""


class NonPositiveDefinite(StochasticMapError):
    """Raised when a covariance that must be positive (semi-)definite is not"""


class InnovationNotPD(NonPositiveDefinite):
    """Raised when the innovation covariance of an update cannot be factorized"""


class ZeroVariance(StochasticMapError):
    """Raised when a correlation is requested for a component with zero variance"""


class CorrelationOutOfRange(StochasticMapError):
    """Raised when a correlation coefficient falls outside [-1, 1]"""
    def __init__(self, message: str, rho: float = 0.0):
        self.rho = rho
        super().__init__(message)


class UnknownEntity(StochasticMapError):
    """Raised when an entity handle or name is not present in the map"""
    def __init__(self, message: str, entity: Any = None):
        self.entity = entity
        super().__init__(message)


class KindMismatch(StochasticMapError):
    """Raised when an entity's kind does not support the requested operation"""


class DuplicateEntity(StochasticMapError):
    """Raised when an operation requires distinct entities but receives repeats"""


class ScenarioError(StochasticMapError):
    """Raised when a scenario references names that were never declared"""


class StepFailed(StochasticMapError):
    """Raised when a scenario step fails numerically"""
    def __init__(self, step_index: int, step_kind: str, cause: Optional[StochasticMapError] = None):
        self.step_index = step_index
        self.step_kind = step_kind
        self.cause = cause
        self.error_kind = type(cause).__name__ if cause is not None else "Unknown"
        detail = cause.message if cause is not None else "unknown failure"
        super().__init__(f"step {step_index} ({step_kind}) failed with {self.error_kind}: {detail}")
