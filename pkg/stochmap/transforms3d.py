"""
Spatial (6-DOF) relationship algebra

Poses carry a translation (x, y, z) and three orientation angles (φ, θ, ψ)
under one of two conventions:

- Euler: R = Rot(z, φ) · Rot(y, θ) · Rot(z, ψ), singular where sin θ = 0
- RPY:   R = Rot(z, φ) · Rot(y, θ) · Rot(x, ψ), singular where cos θ = 0

Angles of a compound relationship are extracted from the compound rotation
with atan2. Jacobians of the angle part go through the angle-rate matrix E,
which maps angle rates to angular velocity in the fixed frame; E is not
invertible at the convention's singularity.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence, Tuple, Union

import numpy as np

from .config import Config
from .data_models import Convention
from .exceptions import ConventionMismatch, InvalidValue, ShapeMismatch, SingularOrientation
from .propagate import finite_difference_jacobian
from .transforms2d import normalize_angle

logger = logging.getLogger(__name__)

ANGLE_SLOTS = (3, 4, 5)


def _as_convention(value: Union[str, Convention]) -> Convention:
    try:
        return Convention(value)
    except ValueError:
        raise InvalidValue(f"Unknown orientation convention: {value!r}")


@dataclass(frozen=True)
class Pose3:
    """
    6-DOF spatial relationship.

    Attributes:
        x, y, z (float): Translation (meters)
        phi, theta, psi (float): Orientation angles (radians), each in (-π, π]
        convention (Convention): Euler (z-y'-z'') or RPY (z-y'-x'')
    """
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    phi: float = 0.0
    theta: float = 0.0
    psi: float = 0.0
    convention: Convention = Convention.EULER

    def __post_init__(self):
        object.__setattr__(self, "convention", _as_convention(self.convention))
        for name in ("x", "y", "z"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise InvalidValue(f"Pose3.{name} must be finite, got {value}")
            object.__setattr__(self, name, value)
        for name in ("phi", "theta", "psi"):
            object.__setattr__(self, name, normalize_angle(getattr(self, name)))

    @classmethod
    def from_array(cls, values: Sequence[float], convention: Union[str, Convention]) -> "Pose3":
        values = np.asarray(values, dtype=float).reshape(-1)
        if values.size != 6:
            raise ShapeMismatch(f"Pose3 needs 6 values, got {values.size}")
        return cls(*values.tolist(), convention=convention)

    @classmethod
    def identity(cls, convention: Union[str, Convention]) -> "Pose3":
        return cls(convention=convention)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.phi, self.theta, self.psi])

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def angles(self) -> Tuple[float, float, float]:
        return self.phi, self.theta, self.psi


# Primitive rotations and their derivatives

def rot_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _drot_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[0.0, 0.0, 0.0], [0.0, -s, -c], [0.0, c, -s]])


def _drot_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[-s, 0.0, c], [0.0, 0.0, 0.0], [-c, 0.0, -s]])


def _drot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]])


def _third_axis(convention: Convention) -> Tuple[Callable, Callable]:
    if convention is Convention.EULER:
        return rot_z, _drot_z
    return rot_x, _drot_x


def rotation_matrix(phi: float, theta: float, psi: float, convention: Union[str, Convention]) -> np.ndarray:
    """
    Rotation matrix of an angle triple, written out element by element.

    Args:
        phi, theta, psi: Orientation angles (radians)
        convention: Euler or RPY

    Returns:
        3×3 orthonormal matrix with columns n, o, a
    """
    convention = _as_convention(convention)
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(psi), math.sin(psi)
    if convention is Convention.EULER:
        return np.array([
            [cf * ct * cp - sf * sp, -cf * ct * sp - sf * cp, cf * st],
            [sf * ct * cp + cf * sp, -sf * ct * sp + cf * cp, sf * st],
            [-st * cp, st * sp, ct],
        ])
    return np.array([
        [cf * ct, cf * st * sp - sf * cp, cf * st * cp + sf * sp],
        [sf * ct, sf * st * sp + cf * cp, sf * st * cp - cf * sp],
        [-st, ct * sp, ct * cp],
    ])


def rot_of_pose(p: Pose3) -> np.ndarray:
    """Rotation matrix of a pose under its own convention."""
    return rotation_matrix(p.phi, p.theta, p.psi, p.convention)


def rotation_partials(phi: float, theta: float, psi: float, convention: Union[str, Convention]):
    """
    Partial derivatives of the rotation matrix.

    Returns:
        (∂R/∂φ, ∂R/∂θ, ∂R/∂ψ)
    """
    convention = _as_convention(convention)
    third, dthird = _third_axis(convention)
    rz, ry, r3 = rot_z(phi), rot_y(theta), third(psi)
    return (
        _drot_z(phi) @ ry @ r3,
        rz @ _drot_y(theta) @ r3,
        rz @ ry @ dthird(psi),
    )


def angles_of_rot(rotation: np.ndarray, convention: Union[str, Convention]) -> Tuple[float, float, float]:
    """
    Extract the angle triple of a rotation matrix with atan2.

    θ is taken in [0, π] for Euler and in [-π/2, π/2] for RPY. At the
    convention's singularity φ is set to 0 and the remaining rotation is
    assigned to ψ.

    Args:
        rotation: 3×3 rotation matrix
        convention: Euler or RPY

    Returns:
        (φ, θ, ψ)
    """
    convention = _as_convention(convention)
    nx, ox, ax = rotation[0]
    ny, oy, ay = rotation[1]
    nz, oz, az = rotation[2]
    eps = Config.DEGENERATE_EXTRACTION

    if convention is Convention.EULER:
        r = math.hypot(ax, ay)
        if r < eps:
            phi = 0.0
            theta = math.atan2(r, az)
            psi = math.atan2(ny, nx) if az > 0 else math.atan2(ny, -nx)
            return phi, theta, psi
        phi = math.atan2(ay, ax)
        cf, sf = math.cos(phi), math.sin(phi)
        theta = math.atan2(ax * cf + ay * sf, az)
        psi = math.atan2(-nx * sf + ny * cf, -ox * sf + oy * cf)
        return phi, theta, psi

    r = math.hypot(nx, ny)
    theta = math.atan2(-nz, r)
    if r < eps:
        phi = 0.0
        psi = math.atan2(ox, oy) if -nz > 0 else math.atan2(-ox, oy)
        return phi, theta, psi
    phi = math.atan2(ny, nx)
    psi = math.atan2(oz, az)
    return phi, theta, psi


def _check_conventions(*poses: Pose3) -> Convention:
    conventions = {p.convention for p in poses}
    if len(conventions) != 1:
        raise ConventionMismatch(
            f"Cannot combine poses with conventions {sorted(c.value for c in conventions)}"
        )
    return conventions.pop()


def compose3(a: Pose3, b: Pose3) -> Pose3:
    """
    Head-to-tail compounding a ⊕ b of 6-DOF relationships.

    Raises:
        ConventionMismatch: If a and b use different conventions
    """
    convention = _check_conventions(a, b)
    r1 = rot_of_pose(a)
    translation = r1 @ b.translation + a.translation
    phi, theta, psi = angles_of_rot(r1 @ rot_of_pose(b), convention)
    return Pose3(*translation.tolist(), phi, theta, psi, convention=convention)


def inverse3(p: Pose3) -> Pose3:
    """
    Reverse relationship ⊖p.

    Euler angles reverse in closed form as (-ψ, -θ, -φ); RPY angles are
    re-extracted from Rᵀ.
    """
    rotation = rot_of_pose(p)
    translation = -rotation.T @ p.translation
    if p.convention is Convention.EULER:
        angles = (-p.psi, -p.theta, -p.phi)
    else:
        angles = angles_of_rot(rotation.T, p.convention)
    return Pose3(*translation.tolist(), *angles, convention=p.convention)


def singularity_margin(p: Pose3) -> float:
    """|sin θ| for Euler poses, |cos θ| for RPY poses."""
    if p.convention is Convention.EULER:
        return abs(math.sin(p.theta))
    return abs(math.cos(p.theta))


def check_singularity(p: Pose3, context: str = "Jacobian") -> float:
    """
    Refuse poses too close to the convention's singularity.

    Returns:
        The singularity margin of p

    Raises:
        SingularOrientation: If the margin is below Config.SINGULARITY_REJECT_MARGIN
    """
    margin = singularity_margin(p)
    if margin < Config.SINGULARITY_REJECT_MARGIN:
        raise SingularOrientation(
            f"{context}: {p.convention.value} orientation is singular (margin {margin:.3e})",
            margin=margin,
            threshold=Config.SINGULARITY_REJECT_MARGIN,
        )
    if margin < Config.SINGULARITY_WARN_MARGIN:
        logger.warning(
            f"{context}: {p.convention.value} orientation near singularity (margin {margin:.4f})"
        )
    return margin


def angle_rate_matrix(phi: float, theta: float, convention: Union[str, Convention]) -> np.ndarray:
    """Matrix E mapping angle rates (φ̇, θ̇, ψ̇) to fixed-frame angular velocity."""
    convention = _as_convention(convention)
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    if convention is Convention.EULER:
        return np.array([[0.0, -sf, cf * st], [0.0, cf, sf * st], [1.0, 0.0, ct]])
    return np.array([[0.0, -sf, cf * ct], [0.0, cf, sf * ct], [1.0, 0.0, -st]])


def inverse_angle_rate_matrix(phi: float, theta: float, convention: Union[str, Convention]) -> np.ndarray:
    """Closed-form E⁻¹; callers must have checked the singularity margin."""
    convention = _as_convention(convention)
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    if convention is Convention.EULER:
        return np.array([
            [-ct * cf / st, -ct * sf / st, 1.0],
            [-sf, cf, 0.0],
            [cf / st, sf / st, 0.0],
        ])
    return np.array([
        [st * cf / ct, st * sf / ct, 1.0],
        [-sf, cf, 0.0],
        [cf / ct, sf / ct, 0.0],
    ])


def jac_compose3(a: Pose3, b: Pose3, result: Pose3) -> np.ndarray:
    """
    Jacobian of a ⊕ b with respect to (a, b), using final terms.

    Block form [[I, M, R1, 0], [0, K1, 0, K2]] with
    M = [ẑ × (t3 - t1), ∂R1/∂θ·t2, ∂R1/∂ψ·t2], K1 = E(α3)⁻¹E(α1)
    and K2 = E(α3)⁻¹R1E(α2).

    Args:
        a: Left operand
        b: Right operand
        result: compose3(a, b)

    Returns:
        6×12 matrix

    Raises:
        ConventionMismatch: If the poses use different conventions
        SingularOrientation: If the resultant orientation is singular
    """
    convention = _check_conventions(a, b, result)
    check_singularity(result, "compounding Jacobian")

    r1 = rot_of_pose(a)
    _, d_theta, d_psi = rotation_partials(a.phi, a.theta, a.psi, convention)
    t2 = b.translation
    offset = result.translation - a.translation
    m = np.column_stack([
        np.array([-offset[1], offset[0], 0.0]),
        d_theta @ t2,
        d_psi @ t2,
    ])
    e3_inv = inverse_angle_rate_matrix(result.phi, result.theta, convention)
    k1 = e3_inv @ angle_rate_matrix(a.phi, a.theta, convention)
    k2 = e3_inv @ r1 @ angle_rate_matrix(b.phi, b.theta, convention)

    jacobian = np.zeros((6, 12))
    jacobian[:3, :3] = np.eye(3)
    jacobian[:3, 3:6] = m
    jacobian[:3, 6:9] = r1
    jacobian[3:, 3:6] = k1
    jacobian[3:, 9:12] = k2
    return jacobian


def jac_inverse3(p: Pose3, result: Pose3) -> np.ndarray:
    """
    Jacobian of ⊖p.

    Euler: [[-Rᵀ, N], [0, Q]] with N's columns -(∂R/∂αₖ)ᵀ t and Q the
    anti-diagonal of -1. RPY: central differences of inverse3.

    Raises:
        SingularOrientation: RPY only, when the reversed orientation is singular
    """
    _check_conventions(p, result)
    if p.convention is Convention.EULER:
        rotation = rot_of_pose(p)
        t = p.translation
        partials = rotation_partials(p.phi, p.theta, p.psi, p.convention)
        jacobian = np.zeros((6, 6))
        jacobian[:3, :3] = -rotation.T
        jacobian[:3, 3:] = np.column_stack([-d.T @ t for d in partials])
        jacobian[3:, 3:] = -np.fliplr(np.eye(3))
        return jacobian

    check_singularity(result, "RPY reversal Jacobian")
    convention = p.convention
    return finite_difference_jacobian(
        lambda v: inverse3(Pose3.from_array(v, convention)).as_array(),
        p.as_array(),
        angle_outputs=ANGLE_SLOTS,
    )


def tail_to_tail3(a_wi: Pose3, a_wj: Pose3) -> Tuple[Pose3, np.ndarray]:
    """
    ⊖a_wi ⊕ a_wj with the chained Jacobian [J1⊕·J⊖ | J2⊕] (6×12).
    """
    inv = inverse3(a_wi)
    result = compose3(inv, a_wj)
    j_plus = jac_compose3(inv, a_wj, result)
    j_minus = jac_inverse3(a_wi, inv)
    return result, np.hstack([j_plus[:, :6] @ j_minus, j_plus[:, 6:]])


def transform_point3(pose: Pose3, point: Sequence[float]) -> np.ndarray:
    """Express a point given in the pose's frame in the pose's base frame."""
    return rot_of_pose(pose) @ np.asarray(point, dtype=float) + pose.translation


def homogeneous3(p: Pose3) -> np.ndarray:
    """4×4 homogeneous transform of a pose."""
    matrix = np.eye(4)
    matrix[:3, :3] = rot_of_pose(p)
    matrix[:3, 3] = p.translation
    return matrix


def pose_from_homogeneous3(matrix: np.ndarray, convention: Union[str, Convention]) -> Pose3:
    angles = angles_of_rot(matrix[:3, :3], convention)
    return Pose3(*matrix[:3, 3].tolist(), *angles, convention=convention)


def canonical3(p: Pose3) -> Pose3:
    """Re-extract the angles of p on the convention's canonical branch."""
    return Pose3(*p.translation.tolist(), *angles_of_rot(rot_of_pose(p), p.convention),
                 convention=p.convention)
