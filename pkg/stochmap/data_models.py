"""
Data Models for the stochastic map
"""

from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Optional, Sequence

import numpy as np

from .config import Config
from .exceptions import InvalidValue, NonPositiveDefinite, ShapeMismatch


def symmetrize(cov: np.ndarray) -> np.ndarray:
    """Return (C + Cᵀ)/2."""
    return 0.5 * (cov + cov.T)


def is_psd(cov: np.ndarray) -> bool:
    """
    Check positive semi-definiteness with a trace-relative tolerance.

    Args:
        cov: Symmetric matrix

    Returns:
        True if the smallest eigenvalue is above -(1e-10·trace + 1e-14)
    """
    if cov.size == 0:
        return True
    smallest = float(np.linalg.eigvalsh(cov)[0])
    slack = Config.PSD_RELATIVE_TOL * max(float(np.trace(cov)), 0.0) + Config.PSD_ABSOLUTE_TOL
    return smallest >= -slack


@dataclass(eq=False)
class Gaussian:
    """
    First two moments of an uncertain quantity.

    The covariance is symmetrized on construction and must be positive
    semi-definite. Any uncertain spatial relationship, measurement or
    control input is carried as a Gaussian.

    Attributes:
        mean (np.ndarray): Mean vector, one entry per variable
        cov (np.ndarray): Covariance matrix, dim × dim
    """
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).reshape(-1)
        cov = np.asarray(self.cov, dtype=float)
        if cov.ndim == 0:
            cov = cov.reshape(1, 1)
        if cov.shape != (mean.size, mean.size):
            raise ShapeMismatch(
                f"Covariance shape {cov.shape} does not match mean of length {mean.size}"
            )
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise InvalidValue("Gaussian moments must be finite")
        cov = symmetrize(cov)
        if not is_psd(cov):
            raise NonPositiveDefinite("Covariance is not positive semi-definite")
        self.mean = mean
        self.cov = cov

    @property
    def dim(self) -> int:
        return int(self.mean.size)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    @classmethod
    def exact(cls, mean: Sequence[float]) -> "Gaussian":
        """A perfectly known value (zero covariance)."""
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        return cls(mean, np.zeros((mean.size, mean.size)))

    def marginal(self, indices: Sequence[int]) -> "Gaussian":
        idx = np.asarray(indices, dtype=int)
        return Gaussian(self.mean[idx], self.cov[np.ix_(idx, idx)])

    def to_dict(self) -> Dict[str, Any]:
        return {"mean": self.mean.tolist(), "cov": self.cov.tolist()}


@dataclass(eq=False)
class Ellipse:
    """
    Planar confidence ellipse of an (x, y) covariance block.

    Attributes:
        center (np.ndarray): Ellipse center (meters)
        semi_axes (np.ndarray): Major then minor semi-axis (meters)
        orientation (float): Angle of the major axis in (-π/2, π/2]
        confidence (float): Enclosed probability mass
    """
    center: np.ndarray
    semi_axes: np.ndarray
    orientation: float
    confidence: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "center": [float(v) for v in self.center],
            "semi_axes": [float(v) for v in self.semi_axes],
            "orientation": float(self.orientation),
            "confidence": float(self.confidence),
        }


class Convention(str, Enum):
    """Orientation parameterization of a 6-DOF pose."""
    EULER = "euler"
    RPY = "rpy"


class EntityKind(str, Enum):
    """Kind of a map entity; the kind fixes the number of state variables."""
    POINT2 = "point2"
    POSE2 = "pose2"
    POSE3 = "pose3"

    @property
    def dim(self) -> int:
        return {"point2": 2, "pose2": 3, "pose3": 6}[self.value]

    @property
    def angle_components(self) -> tuple:
        """Indices of the angle variables within the entity's block"""
        return {"point2": (), "pose2": (2,), "pose3": (3, 4, 5)}[self.value]

    @property
    def is_pose(self) -> bool:
        return self is not EntityKind.POINT2


@dataclass(frozen=True)
class EntityId:
    """
    Stable handle of an entity in a stochastic map.

    Attributes:
        key (int): Insertion index, unique within the map
        kind (EntityKind): Entity kind (immutable)
        name (str): Human-readable name used by scenarios and queries
        convention (Optional[Convention]): Orientation convention of 6-DOF poses
    """
    key: int
    kind: EntityKind
    name: str = ""
    convention: Optional[Convention] = None

    def __str__(self) -> str:
        return self.name or f"#{self.key}"


@dataclass(eq=False)
class UpdateDiagnostics:
    """
    Result of a Kalman-filter update.

    Attributes:
        gain (np.ndarray): Kalman gain K (state dim × measurement dim)
        innovation (np.ndarray): Wrapped innovation z - h(x̂) at the prior estimate
        innovation_cov (np.ndarray): H C Hᵀ + C(v) at the prior estimate
        iterations (int): Number of relinearized updates applied
        mahalanobis_sq (float): Squared Mahalanobis distance of the innovation
        converged (bool): False when the iterated update hit its iteration limit
        status (str): "Updated" or "GateRejected"
        residual_before (float): |z - h(x̂)| before the update
        residual_after (float): |z - h(x̂)| after the update
    """
    gain: np.ndarray
    innovation: np.ndarray
    innovation_cov: np.ndarray
    iterations: int = 1
    mahalanobis_sq: float = 0.0
    converged: bool = True
    status: str = "Updated"
    residual_before: float = 0.0
    residual_after: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "status": self.status,
            "gain": np.asarray(self.gain).tolist(),
            "innovation": np.asarray(self.innovation).tolist(),
            "innovation_cov": np.asarray(self.innovation_cov).tolist(),
            "iterations": int(self.iterations),
            "mahalanobis_sq": float(self.mahalanobis_sq),
            "converged": bool(self.converged),
            "residual_before": float(self.residual_before),
            "residual_after": float(self.residual_after),
        }
