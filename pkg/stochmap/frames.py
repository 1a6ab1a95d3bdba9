"""
Mode-generic relationship algebra over raw state vectors.

The stochastic map and the sensor models store entities as flat vectors;
this module dispatches compounding and relation extraction to the planar
or spatial algebra by entity kind and returns the Jacobian blocks over
each operand.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .data_models import Convention, EntityKind
from .exceptions import KindMismatch, ShapeMismatch
from .transforms2d import (
    Pose2,
    compose2,
    inverse2,
    jac_compose2,
    jac_relative_point2,
    jac_transform_point2,
    normalize_angle,
    relative_point2,
    tail_to_tail2,
    transform_point2,
)
from .transforms3d import Pose3, compose3, inverse3, jac_compose3, tail_to_tail3

Blocks = Tuple[np.ndarray, np.ndarray, np.ndarray]


@dataclass(frozen=True)
class FrameAlgebra:
    """
    Relationship algebra for one orientation convention.

    Attributes:
        convention (Optional[Convention]): Convention of 6-DOF poses, None for planar maps
    """
    convention: Optional[Convention] = None

    def _check(self, kind: EntityKind, vec: np.ndarray) -> np.ndarray:
        vec = np.asarray(vec, dtype=float).reshape(-1)
        if vec.size != kind.dim:
            raise ShapeMismatch(f"{kind.value} needs {kind.dim} values, got {vec.size}")
        return vec

    def pose(self, kind: EntityKind, vec: np.ndarray):
        vec = self._check(kind, vec)
        if kind is EntityKind.POSE2:
            return Pose2.from_array(vec)
        if kind is EntityKind.POSE3:
            return Pose3.from_array(vec, self.convention or Convention.EULER)
        raise KindMismatch(f"A {kind.value} has no orientation and cannot act as a frame")

    def identity(self, kind: EntityKind) -> np.ndarray:
        return np.zeros(kind.dim)

    def wrap(self, kind: EntityKind, vec: np.ndarray) -> np.ndarray:
        """Normalize the angle components of an entity vector."""
        out = np.array(vec, dtype=float, copy=True)
        for idx in kind.angle_components:
            out[idx] = normalize_angle(out[idx])
        return out

    def _operands(self, base_kind: EntityKind, base, other_kind: EntityKind, other):
        """Validate a (frame, entity) pair; returns the base pose and the other vector."""
        base_pose = self.pose(base_kind, base)
        other = self._check(other_kind, other)
        if other_kind is EntityKind.POINT2:
            if base_kind is not EntityKind.POSE2:
                raise KindMismatch("Planar points can only be combined with a pose2")
        elif other_kind is not base_kind:
            raise KindMismatch(f"Cannot combine a {other_kind.value} with a {base_kind.value}")
        return base_pose, other

    def compound_value(self, base_kind: EntityKind, base: np.ndarray, rel_kind: EntityKind, rel: np.ndarray) -> np.ndarray:
        """base ⊕ rel without Jacobians (valid at orientation singularities)."""
        base_pose, rel = self._operands(base_kind, base, rel_kind, rel)
        if rel_kind is EntityKind.POINT2:
            return transform_point2(base_pose, rel)
        if base_kind is EntityKind.POSE2:
            return compose2(base_pose, Pose2.from_array(rel)).as_array()
        return compose3(base_pose, Pose3.from_array(rel, base_pose.convention)).as_array()

    def relation_value(self, base_kind: EntityKind, base: np.ndarray, target_kind: EntityKind, target: np.ndarray) -> np.ndarray:
        """⊖base ⊕ target without Jacobians."""
        base_pose, target = self._operands(base_kind, base, target_kind, target)
        if target_kind is EntityKind.POINT2:
            return relative_point2(base_pose, target)
        if base_kind is EntityKind.POSE2:
            return compose2(inverse2(base_pose), Pose2.from_array(target)).as_array()
        return compose3(inverse3(base_pose), Pose3.from_array(target, base_pose.convention)).as_array()

    def compound(self, base_kind: EntityKind, base: np.ndarray, rel_kind: EntityKind, rel: np.ndarray) -> Blocks:
        """
        Locate an entity given relative to a base frame: base ⊕ rel.

        Returns:
            (result vector, Jacobian over base, Jacobian over rel)

        Raises:
            KindMismatch: If the base is not a pose or the kinds cannot be combined
            SingularOrientation: 6-DOF result at the convention's singularity
        """
        base_pose, rel = self._operands(base_kind, base, rel_kind, rel)
        if rel_kind is EntityKind.POINT2:
            result = transform_point2(base_pose, rel)
            jacobian = jac_transform_point2(base_pose, rel, result)
            return result, jacobian[:, :3], jacobian[:, 3:]
        if base_kind is EntityKind.POSE2:
            rel_pose = Pose2.from_array(rel)
            result = compose2(base_pose, rel_pose)
            jacobian = jac_compose2(base_pose, rel_pose, result)
        else:
            rel_pose = Pose3.from_array(rel, base_pose.convention)
            result = compose3(base_pose, rel_pose)
            jacobian = jac_compose3(base_pose, rel_pose, result)
        dim = base_kind.dim
        return result.as_array(), jacobian[:, :dim], jacobian[:, dim:]

    def relation(self, base_kind: EntityKind, base: np.ndarray, target_kind: EntityKind, target: np.ndarray) -> Blocks:
        """
        Relation of a target seen from a base frame, both in world coordinates:
        ⊖base ⊕ target.

        Returns:
            (relation vector, Jacobian over base, Jacobian over target)
        """
        base_pose, target = self._operands(base_kind, base, target_kind, target)
        if target_kind is EntityKind.POINT2:
            result = relative_point2(base_pose, target)
            jacobian = jac_relative_point2(base_pose, target, result)
            return result, jacobian[:, :3], jacobian[:, 3:]
        if base_kind is EntityKind.POSE2:
            result, jacobian = tail_to_tail2(base_pose, Pose2.from_array(target))
        else:
            result, jacobian = tail_to_tail3(base_pose, Pose3.from_array(target, base_pose.convention))
        dim = base_kind.dim
        return result.as_array(), jacobian[:, :dim], jacobian[:, dim:]
