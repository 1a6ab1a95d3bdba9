"""
Stochastic Map

Joint estimate of every spatial relationship known to the system: one mean
state vector holding all entities side by side and the full system
covariance, cross-covariance blocks included. Those off-diagonal blocks
are what let a measurement of one entity improve the estimates of others.

Mutating operations require exclusive access; extraction and gating only
read the map.
"""

import logging
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from .config import Config
from .data_models import (
    Convention,
    EntityId,
    EntityKind,
    Gaussian,
    UpdateDiagnostics,
    symmetrize,
)
from .exceptions import (
    DuplicateEntity,
    InnovationNotPD,
    InvalidValue,
    KindMismatch,
    NonPositiveDefinite,
    ShapeMismatch,
    UnknownEntity,
)
from .frames import FrameAlgebra
from .propagate import chi_square_quantile
from .transforms2d import wrap_angles

if TYPE_CHECKING:
    from .sensors import SensorModel

logger = logging.getLogger(__name__)

EntityRef = Union[EntityId, str]

ANCHOR_NAME = "robot"


class StochasticMap:
    """
    Entity registry, joint mean and full system covariance.

    Entities are laid out in insertion order; each occupies kind.dim
    consecutive state variables.
    """

    def __init__(self, mode: str = "2d"):
        if mode not in Config.MODES:
            raise InvalidValue(f"Unknown map mode {mode!r}; expected one of {list(Config.MODES)}")
        settings = Config.MODES[mode]
        self.mode = mode
        self.pose_kind = EntityKind(settings["pose_kind"])
        self.convention = Convention(settings["convention"]) if settings["convention"] else None
        self.frames = FrameAlgebra(self.convention)
        self.entities: List[EntityId] = []
        self._offsets: Dict[int, int] = {}
        self.mean = np.zeros(0)
        self.cov = np.zeros((0, 0))

    # Registry

    @property
    def dim(self) -> int:
        return int(self.mean.size)

    @property
    def anchor(self) -> EntityId:
        return self.entities[0]

    def entity(self, name: str) -> EntityId:
        """Look an entity up by name."""
        for entity in self.entities:
            if entity.name == name:
                return entity
        raise UnknownEntity(f"No entity named {name!r}", entity=name)

    def resolve(self, ref: EntityRef) -> EntityId:
        if isinstance(ref, str):
            return self.entity(ref)
        if ref.key not in self._offsets or self.entities[ref.key] != ref:
            raise UnknownEntity(f"Entity {ref} is not part of this map", entity=ref)
        return ref

    def index(self, ref: EntityRef) -> slice:
        """State-vector slice of an entity."""
        entity = self.resolve(ref)
        start = self._offsets[entity.key]
        return slice(start, start + entity.kind.dim)

    def angle_indices(self) -> List[int]:
        """Positions of every angle variable in the state vector."""
        indices = []
        for entity in self.entities:
            start = self._offsets[entity.key]
            indices.extend(start + k for k in entity.kind.angle_components)
        return indices

    def block(self, i: EntityRef, j: EntityRef) -> np.ndarray:
        """Covariance block C(xᵢ, xⱼ)."""
        return self.cov[self.index(i), self.index(j)]

    def world_estimate(self, ref: EntityRef) -> Gaussian:
        """World-frame marginal of one entity."""
        s = self.index(ref)
        return Gaussian(self.mean[s], self.cov[s, s])

    def copy(self) -> "StochasticMap":
        other = StochasticMap(self.mode)
        other.entities = list(self.entities)
        other._offsets = dict(self._offsets)
        other.mean = self.mean.copy()
        other.cov = self.cov.copy()
        return other

    def _allowed(self, kind: EntityKind) -> None:
        if kind is self.pose_kind:
            return
        if kind is EntityKind.POINT2 and self.pose_kind is EntityKind.POSE2:
            return
        raise KindMismatch(f"A {self.mode} map cannot hold {kind.value} entities")

    def _register(self, kind: EntityKind, name: str) -> EntityId:
        self._allowed(kind)
        name = name or f"object{len(self.entities)}"
        if any(e.name == name for e in self.entities):
            raise DuplicateEntity(f"An entity named {name!r} already exists")
        convention = self.convention if kind is EntityKind.POSE3 else None
        entity = EntityId(key=len(self.entities), kind=kind, name=name, convention=convention)
        self._offsets[entity.key] = self.dim
        self.entities.append(entity)
        return entity

    def _append(self, mean: np.ndarray, diag: np.ndarray, cross: np.ndarray) -> None:
        n, d = self.dim, mean.size
        cov = np.zeros((n + d, n + d))
        cov[:n, :n] = self.cov
        cov[n:, :n] = cross
        cov[:n, n:] = cross.T
        cov[n:, n:] = symmetrize(diag)
        self.mean = np.concatenate([self.mean, mean])
        self.cov = cov

    # Insertion

    def add_object_world(self, prior: Gaussian, kind: Optional[EntityKind] = None, name: str = "") -> EntityId:
        """
        Insert an object whose world estimate is independent of the map.

        The new cross-covariance blocks are zero.

        Raises:
            ShapeMismatch: If the prior does not match the kind
        """
        kind = EntityKind(kind) if kind is not None else self.pose_kind
        if prior.dim != kind.dim:
            raise ShapeMismatch(f"A {kind.value} prior needs dimension {kind.dim}, got {prior.dim}")
        entity = self._register(kind, name)
        self._append(self.frames.wrap(kind, prior.mean), prior.cov, np.zeros((kind.dim, self.dim)))
        logger.debug(f"Added {entity} in the world frame")
        return entity

    def add_object_relative(
        self,
        base: EntityRef,
        rel: Gaussian,
        kind: Optional[EntityKind] = None,
        name: str = "",
    ) -> EntityId:
        """
        Insert an object measured relative to a mapped pose.

        With G_x, G_z the Jacobians of base ⊕ z, the new diagonal block is
        A = G_x C(x_b) G_xᵀ + G_z C(z) G_zᵀ and the new cross row is
        B = G_x C(x_b, x).

        Args:
            base: Pose the measurement was taken from
            rel: Measured relation z with covariance C(z), independent of the map
            kind: Kind of the new entity (default: the map's pose kind)
            name: Entity name

        Raises:
            UnknownEntity, ShapeMismatch, KindMismatch, SingularOrientation
        """
        base = self.resolve(base)
        kind = EntityKind(kind) if kind is not None else self.pose_kind
        if rel.dim != kind.dim:
            raise ShapeMismatch(f"A {kind.value} relation needs dimension {kind.dim}, got {rel.dim}")
        self._allowed(kind)
        s = self.index(base)
        mean, g_base, g_rel = self.frames.compound(base.kind, self.mean[s], kind, rel.mean)
        diag = g_base @ self.cov[s, s] @ g_base.T + g_rel @ rel.cov @ g_rel.T
        cross = g_base @ self.cov[s, :]
        entity = self._register(kind, name)
        self._append(mean, diag, cross)
        logger.debug(f"Added {entity} relative to {base}")
        return entity

    # Motion

    def move_entity(self, ref: EntityRef, control: Gaussian, control_cross: Optional[np.ndarray] = None) -> None:
        """
        Apply an uncertain relative motion y = (û, C(w)) to a pose.

        Only the moved entity's row and column of blocks change:
        x_R ← x_R ⊕ û, A′ = J1 C(x_R) J1ᵀ + J2 C(y) J2ᵀ and
        B′ = J1 C(x_R, x) for every other entity.

        Args:
            ref: Entity to move
            control: Motion estimate
            control_cross: Optional C(x, y) between the whole state and the control (dim × control dim)

        Raises:
            UnknownEntity, KindMismatch (points do not move), ShapeMismatch
        """
        entity = self.resolve(ref)
        if not entity.kind.is_pose:
            raise KindMismatch(f"{entity} is a {entity.kind.value} and cannot move")
        if control.dim != entity.kind.dim:
            raise ShapeMismatch(f"Control of dimension {control.dim} cannot move a {entity.kind.value}")
        s = self.index(entity)
        new_mean, j1, j2 = self.frames.compound(entity.kind, self.mean[s], entity.kind, control.mean)

        row = j1 @ self.cov[s, :]
        diag = j1 @ self.cov[s, s] @ j1.T + j2 @ control.cov @ j2.T
        if control_cross is not None:
            cross = np.asarray(control_cross, dtype=float)
            if cross.shape != (self.dim, control.dim):
                raise ShapeMismatch(f"Control cross-covariance must be {(self.dim, control.dim)}, got {cross.shape}")
            row = row + j2 @ cross.T
            local = j1 @ cross[s, :] @ j2.T
            diag = diag + local + local.T

        self.cov[s, :] = row
        self.cov[:, s] = row.T
        self.cov[s, s] = symmetrize(diag)
        self.mean[s] = new_mean
        logger.debug(f"Moved {entity}")

    # Measurement updates

    def linearize(self, sensor: "SensorModel", state: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
        """
        Evaluate a sensor and its full-width Jacobian at a state.

        Returns:
            (h(x), H) with H of shape meas_dim × state dim; untouched entities get zero columns
        """
        state = self.mean if state is None else state
        slices = [self.index(e) for e in sensor.touched]
        blocks = [state[s] for s in slices]
        predicted = np.atleast_1d(np.asarray(sensor.h(blocks), dtype=float))
        H = np.zeros((sensor.meas_dim, self.dim))
        for s, jac in zip(slices, sensor.jacobian(blocks)):
            jac = np.atleast_2d(np.asarray(jac, dtype=float))
            if jac.shape != (sensor.meas_dim, s.stop - s.start):
                raise ShapeMismatch(f"Sensor {sensor.name!r} returned a Jacobian block {jac.shape}")
            H[:, s] += jac
        return predicted, H

    def _wrap_state(self, state: np.ndarray) -> np.ndarray:
        idx = self.angle_indices()
        if idx:
            state = state.copy()
            state[idx] = wrap_angles(state[idx])
        return state

    @staticmethod
    def _wrap_measurement(values: np.ndarray, sensor: "SensorModel") -> np.ndarray:
        idx = list(sensor.angle_components)
        if idx:
            values = values.copy()
            values[idx] = wrap_angles(values[idx])
        return values

    def _gain(self, H: np.ndarray, noise_cov: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        S = symmetrize(H @ self.cov @ H.T + noise_cov)
        try:
            linalg.cho_factor(S)
        except linalg.LinAlgError:
            raise InnovationNotPD("Innovation covariance is not positive definite")
        K = linalg.solve(S, H @ self.cov, assume_a="sym").T
        return K, S

    def _check_measurement(self, sensor: "SensorModel", z) -> np.ndarray:
        z = np.atleast_1d(np.asarray(z, dtype=float))
        if z.shape != (sensor.meas_dim,):
            raise ShapeMismatch(f"Sensor {sensor.name!r} expects {sensor.meas_dim} values, got {z.shape}")
        return z

    def ekf_update(self, sensor: "SensorModel", z) -> UpdateDiagnostics:
        """
        Extended Kalman filter update with measurement z.

        x̂⁺ = x̂⁻ + K(z - h(x̂⁻)), C⁺ = C⁻ - K H C⁻, angle innovations wrapped.

        Raises:
            InnovationNotPD, UnknownEntity, ShapeMismatch
        """
        z = self._check_measurement(sensor, z)
        predicted, H = self.linearize(sensor)
        innovation = self._wrap_measurement(z - predicted, sensor)
        K, S = self._gain(H, sensor.noise_cov)
        d2 = float(innovation @ linalg.solve(S, innovation, assume_a="sym"))

        self.mean = self._wrap_state(self.mean + K @ innovation)
        self.cov = symmetrize(self.cov - K @ H @ self.cov)

        after = self._wrap_measurement(z - self.linearize(sensor)[0], sensor)
        return UpdateDiagnostics(
            gain=K,
            innovation=innovation,
            innovation_cov=S,
            iterations=1,
            mahalanobis_sq=d2,
            residual_before=float(np.linalg.norm(innovation)),
            residual_after=float(np.linalg.norm(after)),
        )

    def iekf_update(
        self,
        sensor: "SensorModel",
        z,
        tol: float = Config.IEKF_TOLERANCE,
        max_iter: int = Config.IEKF_MAX_ITERATIONS,
    ) -> UpdateDiagnostics:
        """
        Iterated extended Kalman filter update.

        Each pass relinearizes about the latest estimate xᵢ while keeping the
        original measurement and prior:
        xᵢ₊₁ = x̂⁻ + Kᵢ[z - h(xᵢ) - Hᵢ(x̂⁻ - xᵢ)].
        Iteration stops once an update moves the state by less than tol; the
        covariance is formed once, from the last gain.

        Args:
            sensor: Sensor or pseudo-sensor model
            z: Measurement
            tol: State-change norm that ends the iteration
            max_iter: Maximum number of updates

        Raises:
            InnovationNotPD, UnknownEntity, ShapeMismatch
        """
        if max_iter < 1:
            raise InvalidValue(f"max_iter must be at least 1, got {max_iter}")
        z = self._check_measurement(sensor, z)
        prior = self.mean.copy()
        state = prior
        moved = 0
        converged = False
        first = None

        for _ in range(max_iter):
            predicted, H = self.linearize(sensor, state)
            residual = self._wrap_measurement(z - predicted, sensor)
            K, S = self._gain(H, sensor.noise_cov)
            if first is None:
                first = (residual, S, float(residual @ linalg.solve(S, residual, assume_a="sym")))
            correction = residual - H @ self._wrap_state(prior - state)
            updated = self._wrap_state(prior + K @ correction)
            change = float(np.linalg.norm(self._wrap_state(updated - state)))
            state = updated
            if change < tol:
                converged = True
                break
            moved += 1

        if not converged:
            logger.warning(
                f"Iterated update with sensor {sensor.name!r} did not converge in {max_iter} iterations"
            )
        self.mean = state
        self.cov = symmetrize(self.cov - K @ H @ self.cov)

        innovation, S0, d2 = first
        after = self._wrap_measurement(z - self.linearize(sensor)[0], sensor)
        return UpdateDiagnostics(
            gain=K,
            innovation=innovation,
            innovation_cov=S0,
            iterations=max(1, moved),
            mahalanobis_sq=d2,
            converged=converged,
            residual_before=float(np.linalg.norm(innovation)),
            residual_after=float(np.linalg.norm(after)),
        )

    # Read-only queries

    def extract_relation(self, i: EntityRef, j: EntityRef) -> Gaussian:
        """
        Relation of entity j seen from entity i: ⊖xᵢ ⊕ xⱼ.

        The covariance is G C_sub Gᵀ, with C_sub the joint block of i and j
        (cross blocks included) and G the tail-to-tail Jacobian.

        Raises:
            UnknownEntity, KindMismatch, SingularOrientation
        """
        i, j = self.resolve(i), self.resolve(j)
        if i == j:
            if not i.kind.is_pose:
                raise KindMismatch(f"{i} is a {i.kind.value} and has no frame")
            return Gaussian.exact(self.frames.identity(i.kind))
        si, sj = self.index(i), self.index(j)
        mean, g_i, g_j = self.frames.relation(i.kind, self.mean[si], j.kind, self.mean[sj])
        G = np.hstack([g_i, g_j])
        idx = np.r_[si, sj]
        return Gaussian(mean, symmetrize(G @ self.cov[np.ix_(idx, idx)] @ G.T))

    def mahalanobis_gate(
        self,
        expected: Gaussian,
        z,
        noise_cov,
        p: float = Config.GATE_PROBABILITY,
        angle_components: Optional[Sequence[int]] = None,
    ) -> Tuple[bool, float]:
        """
        Chi-square gate of a measurement against a predicted relation.

        Args:
            expected: Predicted relation (from extract_relation)
            z: Measurement
            noise_cov: Measurement noise covariance
            p: Gate probability
            angle_components: Wrapped components of ν (default: those of the
                map's pose kind when dimensions match)

        Returns:
            (accept, d²)

        Raises:
            NonPositiveDefinite: If expected.cov + noise_cov is not positive definite
        """
        z = np.atleast_1d(np.asarray(z, dtype=float))
        noise_cov = np.atleast_2d(np.asarray(noise_cov, dtype=float))
        if z.shape != (expected.dim,) or noise_cov.shape != (expected.dim, expected.dim):
            raise ShapeMismatch(f"Measurement {z.shape} and noise {noise_cov.shape} do not match dimension {expected.dim}")
        if angle_components is None:
            angle_components = self.pose_kind.angle_components if expected.dim == self.pose_kind.dim else ()
        nu = z - expected.mean
        idx = list(angle_components)
        if idx:
            nu[idx] = wrap_angles(nu[idx])
        S = symmetrize(expected.cov + noise_cov)
        try:
            linalg.cho_factor(S)
        except linalg.LinAlgError:
            raise NonPositiveDefinite("Gate covariance is not positive definite")
        d2 = float(nu @ linalg.solve(S, nu, assume_a="sym"))
        threshold = chi_square_quantile(p, expected.dim)
        accept = d2 <= threshold
        logger.info(f"Gate {'accepted' if accept else 'rejected'}: d² = {d2:.4f}, threshold {threshold:.4f}")
        return accept, d2


def new_map(mode: str = "2d") -> StochasticMap:
    """
    Create a map holding only the anchor: the robot at the identity
    relationship with no uncertainty.
    """
    m = StochasticMap(mode)
    entity = m._register(m.pose_kind, ANCHOR_NAME)
    m._append(np.zeros(entity.kind.dim), np.zeros((entity.kind.dim, entity.kind.dim)), np.zeros((entity.kind.dim, 0)))
    return m
