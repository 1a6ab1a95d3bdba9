"""
Planar relationship algebra

Exact compounding, reversal and composite relations of 3-DOF
relationships (x, y, φ), with the Jacobians used to propagate their
uncertainty. Jacobians take the already computed resultant as an argument.
"""

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .exceptions import InvalidValue, ShapeMismatch

TWO_PI = 2.0 * math.pi


def normalize_angle(theta: float) -> float:
    """
    Reduce an angle to (-π, π].

    Args:
        theta: Angle in radians

    Returns:
        Equivalent angle in (-π, π]; -π maps to +π

    Raises:
        InvalidValue: If theta is NaN or infinite
    """
    theta = float(theta)
    if not math.isfinite(theta):
        raise InvalidValue(f"Cannot normalize non-finite angle {theta}")
    wrapped = math.remainder(theta, TWO_PI)
    if wrapped <= -math.pi:
        wrapped = math.pi
    return wrapped


def angle_difference(a: float, b: float) -> float:
    """Wrapped difference a - b in (-π, π]."""
    return normalize_angle(a - b)


def wrap_angles(values: np.ndarray) -> np.ndarray:
    """Vectorized reduction of an array of angles to (-π, π]."""
    wrapped = np.remainder(values + math.pi, TWO_PI) - math.pi
    return np.where(wrapped <= -math.pi, math.pi, wrapped)


@dataclass(frozen=True)
class Pose2:
    """
    3-DOF spatial relationship.

    Attributes:
        x (float): Translation along x (meters)
        y (float): Translation along y (meters)
        phi (float): Rotation (radians), stored in (-π, π]
    """
    x: float = 0.0
    y: float = 0.0
    phi: float = 0.0

    def __post_init__(self):
        for name in ("x", "y"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise InvalidValue(f"Pose2.{name} must be finite, got {value}")
            object.__setattr__(self, name, value)
        object.__setattr__(self, "phi", normalize_angle(self.phi))

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "Pose2":
        values = np.asarray(values, dtype=float).reshape(-1)
        if values.size != 3:
            raise ShapeMismatch(f"Pose2 needs 3 values, got {values.size}")
        return cls(values[0], values[1], values[2])

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.phi])


IDENTITY2 = Pose2()


def compose2(a: Pose2, b: Pose2) -> Pose2:
    """
    Head-to-tail compounding a ⊕ b.

    Args:
        a: Relationship of frame j relative to frame i
        b: Relationship of frame k relative to frame j

    Returns:
        Relationship of frame k relative to frame i
    """
    c, s = math.cos(a.phi), math.sin(a.phi)
    return Pose2(
        a.x + b.x * c - b.y * s,
        a.y + b.x * s + b.y * c,
        a.phi + b.phi,
    )


def inverse2(a: Pose2) -> Pose2:
    """Reverse relationship ⊖a."""
    c, s = math.cos(a.phi), math.sin(a.phi)
    return Pose2(
        -a.x * c - a.y * s,
        a.x * s - a.y * c,
        -a.phi,
    )


def jac_compose2(a: Pose2, b: Pose2, result: Pose2) -> np.ndarray:
    """
    Jacobian of a ⊕ b with respect to (a, b), evaluated with the resultant.

    Args:
        a: Left operand
        b: Right operand
        result: compose2(a, b)

    Returns:
        3×6 matrix [J1⊕ | J2⊕]
    """
    c, s = math.cos(a.phi), math.sin(a.phi)
    return np.array([
        [1.0, 0.0, -(result.y - a.y), c, -s, 0.0],
        [0.0, 1.0, result.x - a.x, s, c, 0.0],
        [0.0, 0.0, 1.0, 0.0, 0.0, 1.0],
    ])


def jac_inverse2(a: Pose2, result: Pose2) -> np.ndarray:
    """
    Jacobian of ⊖a, evaluated with the reversed coordinates.

    Args:
        a: Relationship being reversed
        result: inverse2(a)

    Returns:
        3×3 matrix J⊖
    """
    c, s = math.cos(a.phi), math.sin(a.phi)
    return np.array([
        [-c, -s, result.y],
        [s, -c, -result.x],
        [0.0, 0.0, -1.0],
    ])


def jacobian_halves(jacobian: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Split a binary-operation Jacobian into its left and right halves."""
    cols = jacobian.shape[1]
    if cols % 2:
        raise ShapeMismatch(f"Jacobian with {cols} columns has no halves")
    return jacobian[:, : cols // 2], jacobian[:, cols // 2:]


def tail_to_tail2(a_wi: Pose2, a_wj: Pose2) -> Tuple[Pose2, np.ndarray]:
    """
    Relation of frame j seen from frame i, both given in a common base: ⊖a_wi ⊕ a_wj.

    Returns:
        (relation, 3×6 Jacobian [J1⊕·J⊖ | J2⊕] over (a_wi, a_wj))
    """
    inv = inverse2(a_wi)
    result = compose2(inv, a_wj)
    j_plus = jac_compose2(inv, a_wj, result)
    j_minus = jac_inverse2(a_wi, inv)
    left, right = jacobian_halves(j_plus)
    return result, np.hstack([left @ j_minus, right])


def head_to_head2(a_ij: Pose2, a_kj: Pose2) -> Tuple[Pose2, np.ndarray]:
    """
    Relation between two frames that share a tip: a_ij ⊕ ⊖a_kj.

    Returns:
        (relation of frame k relative to frame i, 3×6 Jacobian [J1⊕ | J2⊕·J⊖])
    """
    inv = inverse2(a_kj)
    result = compose2(a_ij, inv)
    j_plus = jac_compose2(a_ij, inv, result)
    j_minus = jac_inverse2(a_kj, inv)
    left, right = jacobian_halves(j_plus)
    return result, np.hstack([left, right @ j_minus])


def transform_point2(pose: Pose2, point: Sequence[float]) -> np.ndarray:
    """Express a point given in the pose's frame in the pose's base frame."""
    c, s = math.cos(pose.phi), math.sin(pose.phi)
    px, py = float(point[0]), float(point[1])
    return np.array([pose.x + c * px - s * py, pose.y + s * px + c * py])


def jac_transform_point2(pose: Pose2, point: Sequence[float], result: np.ndarray) -> np.ndarray:
    """2×5 Jacobian of transform_point2 over (pose, point)."""
    c, s = math.cos(pose.phi), math.sin(pose.phi)
    return np.array([
        [1.0, 0.0, -(result[1] - pose.y), c, -s],
        [0.0, 1.0, result[0] - pose.x, s, c],
    ])


def relative_point2(pose: Pose2, point: Sequence[float]) -> np.ndarray:
    """Express a base-frame point in the pose's frame: Rᵀ(p - t)."""
    c, s = math.cos(pose.phi), math.sin(pose.phi)
    dx, dy = float(point[0]) - pose.x, float(point[1]) - pose.y
    return np.array([c * dx + s * dy, -s * dx + c * dy])


def jac_relative_point2(pose: Pose2, point: Sequence[float], result: np.ndarray) -> np.ndarray:
    """2×5 Jacobian of relative_point2 over (pose, point)."""
    c, s = math.cos(pose.phi), math.sin(pose.phi)
    return np.array([
        [-c, -s, result[1], c, s],
        [s, -c, -result[0], -s, c],
    ])


def homogeneous2(pose: Pose2) -> np.ndarray:
    """3×3 homogeneous transform of a pose."""
    c, s = math.cos(pose.phi), math.sin(pose.phi)
    return np.array([[c, -s, pose.x], [s, c, pose.y], [0.0, 0.0, 1.0]])


def pose_from_homogeneous2(matrix: np.ndarray) -> Pose2:
    return Pose2(matrix[0, 2], matrix[1, 2], math.atan2(matrix[1, 0], matrix[0, 0]))


def compose2_batch(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise compounding of (n, 3) arrays; angles wrapped."""
    c, s = np.cos(a[:, 2]), np.sin(a[:, 2])
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[:, 0] = a[:, 0] + b[:, 0] * c - b[:, 1] * s
    out[:, 1] = a[:, 1] + b[:, 0] * s + b[:, 1] * c
    out[:, 2] = wrap_angles(a[:, 2] + b[:, 2])
    return out


def inverse2_batch(a: np.ndarray) -> np.ndarray:
    """Row-wise reversal of an (n, 3) array."""
    c, s = np.cos(a[:, 2]), np.sin(a[:, 2])
    out = np.empty_like(a, dtype=float)
    out[:, 0] = -a[:, 0] * c - a[:, 1] * s
    out[:, 1] = a[:, 0] * s - a[:, 1] * c
    out[:, 2] = wrap_angles(-a[:, 2])
    return out
