"""
Sensor and pseudo-sensor models

A sensor model z = h(x) + v names the entities it touches, evaluates h on
their state blocks, returns one Jacobian block per touched entity and
carries the noise covariance C(v). Geometric constraints are sensors whose
measurement is known exactly (the rectangle pseudo-sensor measures 0).
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Sequence, Tuple

import numpy as np

from .config import Config
from .data_models import EntityId, EntityKind, Gaussian, symmetrize
from .exceptions import DuplicateEntity, InvalidValue, KindMismatch, NonPositiveDefinite, ShapeMismatch
from .frames import FrameAlgebra
from .stochastic_map import StochasticMap

logger = logging.getLogger(__name__)

BlockFunction = Callable[[Sequence[np.ndarray]], np.ndarray]
BlockJacobian = Callable[[Sequence[np.ndarray]], List[np.ndarray]]


def regularize_noise(noise_cov, dim: int) -> np.ndarray:
    """
    Validate a noise covariance and lift a singular one by ε·I.

    Raises:
        ShapeMismatch: If the matrix is not dim × dim
        NonPositiveDefinite: If it has a clearly negative eigenvalue
    """
    noise = np.atleast_2d(np.asarray(noise_cov, dtype=float))
    if noise.shape != (dim, dim):
        raise ShapeMismatch(f"Noise covariance must be {dim}×{dim}, got {noise.shape}")
    if not np.all(np.isfinite(noise)):
        raise InvalidValue("Noise covariance must be finite")
    if np.max(np.abs(noise - noise.T)) > Config.SYMMETRY_TOL * max(1.0, float(np.max(np.abs(noise)))):
        raise InvalidValue("Noise covariance is not symmetric")
    noise = symmetrize(noise)
    smallest = float(np.linalg.eigvalsh(noise)[0])
    slack = Config.PSD_RELATIVE_TOL * max(float(np.trace(noise)), 0.0) + Config.PSD_ABSOLUTE_TOL
    if smallest < -slack:
        raise NonPositiveDefinite("Noise covariance is not positive semi-definite")
    if smallest <= 0.0:
        noise = noise + Config.EXACT_CONSTRAINT_EPS * np.eye(dim)
    return noise


@dataclass(frozen=True, eq=False)
class SensorModel:
    """
    Measurement model of a sensor or geometric constraint.

    Attributes:
        touched (Tuple[EntityId, ...]): Entities the measurement depends on, in argument order
        h (BlockFunction): Maps the touched entities' state blocks to the predicted measurement
        jacobian (BlockJacobian): One meas_dim × kind.dim block per touched entity
        noise_cov (np.ndarray): C(v), floored when singular
        meas_dim (int): Measurement dimension
        angle_components (Tuple[int, ...]): Measurement components that are angles
        name (str): Label used in logs and diagnostics
    """
    touched: Tuple[EntityId, ...]
    h: BlockFunction
    jacobian: BlockJacobian
    noise_cov: np.ndarray
    meas_dim: int
    angle_components: Tuple[int, ...] = field(default_factory=tuple)
    name: str = "sensor"

    def __post_init__(self):
        object.__setattr__(self, "touched", tuple(self.touched))
        object.__setattr__(self, "noise_cov", regularize_noise(self.noise_cov, self.meas_dim))
        object.__setattr__(self, "angle_components", tuple(self.angle_components))

    def evaluate(self, blocks: Sequence[np.ndarray]) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.h(blocks), dtype=float))

    def stacked_jacobian(self, blocks: Sequence[np.ndarray]) -> np.ndarray:
        """Jacobian over the concatenated touched blocks."""
        return np.hstack([np.atleast_2d(b) for b in self.jacobian(blocks)])


def _frames_for(entity: EntityId) -> FrameAlgebra:
    return FrameAlgebra(entity.convention)


def relative_pose_sensor(i: EntityId, j: EntityId, noise_cov) -> SensorModel:
    """
    Sensor on pose i measuring the relative location of pose j: z = ⊖xᵢ ⊕ xⱼ.

    Raises:
        DuplicateEntity: If i and j are the same entity
        KindMismatch: If i and j are not poses of one kind
    """
    if i == j:
        raise DuplicateEntity(f"A relative sensor cannot relate {i} to itself")
    if not i.kind.is_pose or j.kind is not i.kind:
        raise KindMismatch(f"Relative pose sensor needs two poses of one kind, got {i.kind.value} and {j.kind.value}")
    frames = _frames_for(i)
    kind = i.kind

    def h(blocks):
        return frames.relation(kind, blocks[0], kind, blocks[1])[0]

    def jacobian(blocks):
        _, g_i, g_j = frames.relation(kind, blocks[0], kind, blocks[1])
        return [g_i, g_j]

    return SensorModel(
        touched=(i, j),
        h=h,
        jacobian=jacobian,
        noise_cov=noise_cov,
        meas_dim=kind.dim,
        angle_components=kind.angle_components,
        name=f"relative({i}->{j})",
    )


def relative_point_sensor(i: EntityId, j: EntityId, noise_cov) -> SensorModel:
    """Sensor on planar pose i measuring point j in i's frame: z = Rᵀ(p - t)."""
    if i.kind is not EntityKind.POSE2 or j.kind is not EntityKind.POINT2:
        raise KindMismatch(f"Relative point sensor needs a pose2 and a point2, got {i.kind.value} and {j.kind.value}")
    frames = _frames_for(i)

    def h(blocks):
        return frames.relation(i.kind, blocks[0], j.kind, blocks[1])[0]

    def jacobian(blocks):
        _, g_i, g_j = frames.relation(i.kind, blocks[0], j.kind, blocks[1])
        return [g_i, g_j]

    return SensorModel(
        touched=(i, j),
        h=h,
        jacobian=jacobian,
        noise_cov=noise_cov,
        meas_dim=2,
        name=f"point({i}->{j})",
    )


def rectangle_h(pi, pj, pk, pl) -> np.ndarray:
    """
    Rectangularity of four corners labeled counter-clockwise from the lower right.

    Zero for a rectangle: the two parallelism sums and the dot product of
    the sides meeting at corner j.
    """
    pi, pj, pk, pl = (np.asarray(p, dtype=float) for p in (pi, pj, pk, pl))
    return np.array([
        pi[0] - pj[0] + pk[0] - pl[0],
        pi[1] - pj[1] + pk[1] - pl[1],
        float((pi - pj) @ (pk - pj)),
    ])


def rectangle_sensor(i: EntityId, j: EntityId, k: EntityId, l: EntityId, noise_cov) -> SensorModel:
    """
    Pseudo-sensor measuring how far four points are from forming a rectangle.

    Raises:
        DuplicateEntity: If a corner is repeated
        KindMismatch: If a corner is not a point2
    """
    corners = (i, j, k, l)
    if len(set(corners)) != 4:
        raise DuplicateEntity("Rectangle corners must be four distinct entities")
    for corner in corners:
        if corner.kind is not EntityKind.POINT2:
            raise KindMismatch(f"Rectangle corner {corner} is a {corner.kind.value}, not a point2")

    def h(blocks):
        return rectangle_h(*blocks)

    def jacobian(blocks):
        pi, pj, pk, _ = (np.asarray(b, dtype=float) for b in blocks)
        a, b = pi - pj, pk - pj
        return [
            np.array([[1.0, 0.0], [0.0, 1.0], b]),
            np.array([[-1.0, 0.0], [0.0, -1.0], -(a + b)]),
            np.array([[1.0, 0.0], [0.0, 1.0], a]),
            np.array([[-1.0, 0.0], [0.0, -1.0], [0.0, 0.0]]),
        ]

    return SensorModel(
        touched=corners,
        h=h,
        jacobian=jacobian,
        noise_cov=noise_cov,
        meas_dim=3,
        name=f"rectangle({i},{j},{k},{l})",
    )


def predict_measurement(m: StochasticMap, sensor: SensorModel) -> Gaussian:
    """
    Expected measurement and its spread: h(x̂) and H C(x) Hᵀ + C(v).

    Raises:
        UnknownEntity: If a touched entity is not in the map
    """
    predicted, H = m.linearize(sensor)
    return Gaussian(predicted, symmetrize(H @ m.cov @ H.T + sensor.noise_cov))
