"""
Scenario simulator and validation harness

The simulator keeps exact ground truth next to the estimated map, draws
every noisy control and measurement from the (seed, step index) stream,
and records a snapshot of the map after each step.

monte_carlo_validate pushes sampled inputs through an exact chain of
planar compoundings and compares sample moments against the first- (and
optionally second-) order estimates.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from scipy import linalg

from .config import Config
from .data_models import Ellipse, EntityId, EntityKind, Gaussian, UpdateDiagnostics
from .exceptions import (
    InvalidValue,
    NonPositiveDefinite,
    ScenarioError,
    StepFailed,
    StochasticMapError,
    UnknownEntity,
)
from .frames import FrameAlgebra
from .propagate import (
    compound2,
    confidence_ellipse,
    finite_difference_hessian,
    finite_difference_jacobian,
    monte_carlo_moments,
    propagate_second_order,
)
from .random_source import draw_noise, stream_generator
from .schema import (
    ConstraintStep,
    MoveStep,
    QueryStep,
    ScenarioFile,
    SenseKnownStep,
    SenseNewStep,
)
from .sensors import (
    predict_measurement,
    rectangle_sensor,
    regularize_noise,
    relative_point_sensor,
    relative_pose_sensor,
)
from .serialization import map_to_dict
from .stochastic_map import ANCHOR_NAME, StochasticMap, new_map
from .transforms2d import compose2_batch, wrap_angles

logger = logging.getLogger(__name__)

Scenario = ScenarioFile


@dataclass(eq=False)
class Snapshot:
    """
    Map state after one scenario step.

    Attributes:
        step_index (int): 0 for the initial map, then 1 per executed step
        step_kind (str): Kind of the step that produced the snapshot
        map (StochasticMap): Copy of the map after the step
        ellipses (Dict[str, Optional[Ellipse]]): Position ellipse per entity, None when degenerate
        ground_truth (Dict[str, np.ndarray]): Actual entity locations, known only to the simulator
        diagnostics (Dict[str, Any]): Step-specific results (update diagnostics, gate decisions, queries)
    """
    step_index: int
    step_kind: str
    map: StochasticMap
    ellipses: Dict[str, Optional[Ellipse]]
    ground_truth: Dict[str, np.ndarray]
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "step": self.step_index,
            "kind": self.step_kind,
            "map": map_to_dict(self.map),
            "ellipses": {
                name: (ellipse.to_dict() if ellipse is not None else None)
                for name, ellipse in self.ellipses.items()
            },
            "ground_truth": {name: value.tolist() for name, value in self.ground_truth.items()},
            "diagnostics": self.diagnostics,
        }


def map_ellipses(m: StochasticMap, confidence: float = Config.DEFAULT_CONFIDENCE) -> Dict[str, Optional[Ellipse]]:
    """Position ellipse of every entity; None where the (x, y) block is not positive definite."""
    ellipses = {}
    for entity in m.entities:
        try:
            ellipses[entity.name] = confidence_ellipse(m.world_estimate(entity), confidence)
        except NonPositiveDefinite:
            ellipses[entity.name] = None
    return ellipses


def normalized_estimation_error_squared(estimate: Gaussian, truth, angle_components: Sequence[int] = ()) -> float:
    """
    eᵀ C⁻¹ e for the estimation error e = x̂ - x, angle components wrapped.

    Raises:
        NonPositiveDefinite: If the estimate's covariance is singular
    """
    error = estimate.mean - np.asarray(truth, dtype=float)
    idx = list(angle_components)
    if idx:
        error[idx] = wrap_angles(error[idx])
    try:
        factor = linalg.cho_factor(estimate.cov)
    except linalg.LinAlgError:
        raise NonPositiveDefinite("Estimate covariance is not positive definite")
    return float(error @ linalg.cho_solve(factor, error))


class ScenarioRunner:
    """
    Executes one scenario: estimated map, ground truth and snapshots.

    Steps are causally ordered, so execution is sequential.
    """

    def __init__(self, scenario: Scenario, confidence: float = Config.DEFAULT_CONFIDENCE):
        self.scenario = scenario
        self.confidence = confidence
        self.map = new_map(scenario.mode)
        self.frames: FrameAlgebra = self.map.frames
        self.truth: Dict[str, np.ndarray] = {ANCHOR_NAME: np.zeros(self.map.pose_kind.dim)}
        self.snapshots: List[Snapshot] = []

    def _entity(self, name: str) -> EntityId:
        try:
            return self.map.entity(name)
        except UnknownEntity:
            raise ScenarioError(f"Scenario refers to undeclared entity {name!r}")

    def _snapshot(self, index: int, kind: str, diagnostics: Dict[str, Any]) -> None:
        self.snapshots.append(Snapshot(
            step_index=index,
            step_kind=kind,
            map=self.map.copy(),
            ellipses=map_ellipses(self.map, self.confidence),
            ground_truth={name: value.copy() for name, value in self.truth.items()},
            diagnostics=diagnostics,
        ))

    def _gate(self, actor: str, candidate: str, z: np.ndarray, noise_cov: np.ndarray, p: float) -> Dict[str, Any]:
        expected = self.map.extract_relation(actor, candidate)
        kind = self._entity(candidate).kind
        accept, d2 = self.map.mahalanobis_gate(expected, z, noise_cov, p, kind.angle_components)
        return {"candidate": candidate, "accepted": bool(accept), "mahalanobis_sq": d2}

    def _sense_new(self, step: SenseNewStep, rng: np.random.Generator) -> Dict[str, Any]:
        actor_kind = self._entity(step.actor).kind
        kind = actor_kind if step.entity == "pose" else EntityKind.POINT2
        true_rel = np.asarray(step.true_relation, dtype=float)
        noise = np.asarray(step.noise_cov)
        v = draw_noise(rng, noise)
        if kind is EntityKind.POINT2:
            z = true_rel + v
            z_cov = noise
        else:
            # v acts in the sensed frame: C(z) = J2⊕ C(v) J2⊕ᵀ at (z, identity)
            z = self.frames.compound_value(kind, true_rel, kind, v)
            _, _, g_v = self.frames.compound(kind, z, kind, self.frames.identity(kind))
            z_cov = g_v @ noise @ g_v.T
        self.truth[step.name] = self.frames.compound_value(actor_kind, self.truth[step.actor], kind, true_rel)

        gates = []
        if step.gate_against:
            gate_noise = regularize_noise(z_cov, kind.dim)
            for candidate in step.gate_against:
                gates.append(self._gate(step.actor, candidate, z, gate_noise, step.gate_p))
            matches = [g["candidate"] for g in gates if g["accepted"]]
            if matches:
                logger.warning(f"New object {step.name!r} is also consistent with {matches}")
            else:
                logger.info(f"New object {step.name!r} cannot be any of {step.gate_against}")

        self.map.add_object_relative(step.actor, Gaussian(z, z_cov), kind=kind, name=step.name)
        return {"measurement": z.tolist(), "gates": gates}

    def _move(self, step: MoveStep, rng: np.random.Generator) -> Dict[str, Any]:
        kind = self._entity(step.actor).kind
        u = np.asarray(step.control_mean, dtype=float)
        noise = np.asarray(step.noise_cov)
        actual = self.frames.wrap(kind, u + draw_noise(rng, noise))
        self.truth[step.actor] = self.frames.compound_value(kind, self.truth[step.actor], kind, actual)
        self.map.move_entity(step.actor, Gaussian(u, noise))
        return {"actual_motion": actual.tolist()}

    def _sense_known(self, step: SenseKnownStep, rng: np.random.Generator) -> Dict[str, Any]:
        actor, target = self._entity(step.actor), self._entity(step.target)
        if target.kind is EntityKind.POINT2:
            sensor = relative_point_sensor(actor, target, step.noise_cov)
        else:
            sensor = relative_pose_sensor(actor, target, step.noise_cov)
        true_z = self.frames.relation_value(actor.kind, self.truth[step.actor], target.kind, self.truth[step.target])
        z = self.frames.wrap(target.kind, true_z + draw_noise(rng, np.asarray(step.noise_cov)))

        gate = self._gate(step.actor, step.target, z, sensor.noise_cov, step.gate_p)
        if not gate["accepted"]:
            logger.info(f"Measurement of {step.target!r} rejected by the gate (d² = {gate['mahalanobis_sq']:.3f})")
            return {"measurement": z.tolist(), "gate": gate, "update": {"status": "GateRejected"}}
        diagnostics: UpdateDiagnostics = self.map.iekf_update(sensor, z)
        return {"measurement": z.tolist(), "gate": gate, "update": diagnostics.to_dict()}

    def _constraint(self, step: ConstraintStep) -> Dict[str, Any]:
        corners = [self._entity(name) for name in step.targets]
        sensor = rectangle_sensor(*corners, step.noise_cov)
        expected = predict_measurement(self.map, sensor)
        diagnostics = self.map.iekf_update(sensor, np.zeros(sensor.meas_dim))
        return {"predicted": expected.to_dict(), "update": diagnostics.to_dict()}

    def _query(self, step: QueryStep) -> Dict[str, Any]:
        relation = self.map.extract_relation(step.i, step.j)
        result = {"i": step.i, "j": step.j, "relation": relation.to_dict()}
        if relation.dim >= 2:
            try:
                result["ellipse"] = confidence_ellipse(relation, self.confidence).to_dict()
            except NonPositiveDefinite:
                result["ellipse"] = None
        return result

    def _execute(self, index: int, step) -> Dict[str, Any]:
        rng = stream_generator(self.scenario.seed, index)
        if isinstance(step, SenseNewStep):
            return self._sense_new(step, rng)
        if isinstance(step, MoveStep):
            return self._move(step, rng)
        if isinstance(step, SenseKnownStep):
            return self._sense_known(step, rng)
        if isinstance(step, ConstraintStep):
            return self._constraint(step)
        if isinstance(step, QueryStep):
            return self._query(step)
        raise ScenarioError(f"Unsupported step {step!r}")

    def run(self) -> List[Snapshot]:
        self._snapshot(0, "Initial", {})
        for index, step in enumerate(self.scenario.steps, start=1):
            logger.debug(f"Step {index}: {step.kind}")
            try:
                diagnostics = self._execute(index, step)
            except ScenarioError:
                raise
            except StochasticMapError as e:
                raise StepFailed(index, step.kind, e) from e
            self._snapshot(index, step.kind, diagnostics)
        return self.snapshots


def run(sc: Scenario, confidence: float = Config.DEFAULT_CONFIDENCE) -> List[Snapshot]:
    """
    Execute a scenario and return the initial snapshot followed by one per step.

    Raises:
        ScenarioError: If a step refers to an undeclared entity
        StepFailed: If a map operation fails numerically
    """
    return ScenarioRunner(sc, confidence).run()


# Monte Carlo validation

@dataclass(eq=False)
class RelationLink:
    """
    One uncertain planar relationship of a head-to-tail chain.

    Attributes:
        mean (np.ndarray): (x, y, φ)
        cov (np.ndarray): 3×3 covariance
    """
    mean: np.ndarray
    cov: np.ndarray

    @classmethod
    def isotropic(cls, mean: Sequence[float], translation_sigma: float, angle_sigma: float) -> "RelationLink":
        return cls(
            np.asarray(mean, dtype=float),
            np.diag([translation_sigma ** 2, translation_sigma ** 2, angle_sigma ** 2]),
        )


@dataclass(eq=False)
class ValidationReport:
    """
    Comparison of propagated moments against Monte Carlo moments.

    Attributes:
        first_order (Gaussian): First-order estimate of the chain
        monte_carlo (Gaussian): Sample moments
        mean_errors (np.ndarray): |Δmean| / max(|MC mean|, MC std) per component
        variance_errors (np.ndarray): |Δvariance| / MC variance per component
        standard_errors (np.ndarray): MC standard error of each mean component
        n_samples (int): Number of samples
        second_order (Optional[Gaussian]): Second-order estimate, when requested
        second_order_mean_errors (Optional[np.ndarray]): Its mean errors
        second_order_variance_errors (Optional[np.ndarray]): Its variance errors
    """
    first_order: Gaussian
    monte_carlo: Gaussian
    mean_errors: np.ndarray
    variance_errors: np.ndarray
    standard_errors: np.ndarray
    n_samples: int
    second_order: Optional[Gaussian] = None
    second_order_mean_errors: Optional[np.ndarray] = None
    second_order_variance_errors: Optional[np.ndarray] = None

    @property
    def max_error(self) -> float:
        return float(max(np.max(self.mean_errors), np.max(self.variance_errors)))

    def within(self, bound: float) -> bool:
        return self.max_error <= bound

    def to_dict(self) -> Dict[str, Any]:
        report = {
            "n_samples": self.n_samples,
            "first_order": self.first_order.to_dict(),
            "monte_carlo": self.monte_carlo.to_dict(),
            "mean_errors": self.mean_errors.tolist(),
            "variance_errors": self.variance_errors.tolist(),
            "standard_errors": self.standard_errors.tolist(),
            "max_error": self.max_error,
        }
        if self.second_order is not None:
            report["second_order"] = self.second_order.to_dict()
            report["second_order_mean_errors"] = self.second_order_mean_errors.tolist()
            report["second_order_variance_errors"] = self.second_order_variance_errors.tolist()
        return report


def _ratio(numerator: np.ndarray, denominator: np.ndarray) -> np.ndarray:
    out = np.zeros_like(numerator)
    positive = denominator > 0.0
    out[positive] = numerator[positive] / denominator[positive]
    out[~positive & (numerator > 0.0)] = math.inf
    return out


def _relative_errors(estimate: Gaussian, mc: Gaussian):
    diff = estimate.mean - mc.mean
    diff[2] = wrap_angles(np.array([diff[2]]))[0]
    mc_var = np.diag(mc.cov)
    mean_errors = _ratio(np.abs(diff), np.maximum(np.abs(mc.mean), mc.std))
    variance_errors = _ratio(np.abs(np.diag(estimate.cov) - mc_var), mc_var)
    return mean_errors, variance_errors


def chain_function(links: int):
    """Batched head-to-tail compounding of `links` stacked (x, y, φ) blocks."""
    def compound(samples: np.ndarray) -> np.ndarray:
        samples = np.atleast_2d(samples)
        result = samples[:, 0:3]
        for k in range(1, links):
            result = compose2_batch(result, samples[:, 3 * k:3 * k + 3])
        return result
    return compound


def monte_carlo_validate(
    chain: Sequence[RelationLink],
    n_samples: int,
    seed: int,
    second_order: bool = False,
) -> ValidationReport:
    """
    Validate first-order propagation of a compounding chain against sampling.

    Args:
        chain: Independent uncertain links, compounded head to tail
        n_samples: Number of Monte Carlo samples (at least Config.MC_MIN_SAMPLES)
        seed: Seed of the sample streams
        second_order: Also compare the second-order estimate

    Returns:
        ValidationReport
    """
    if n_samples < Config.MC_MIN_SAMPLES:
        raise InvalidValue(f"Monte Carlo validation needs at least {Config.MC_MIN_SAMPLES} samples, got {n_samples}")
    if not chain:
        raise InvalidValue("Validation chain is empty")

    first = Gaussian(chain[0].mean, chain[0].cov)
    for link in chain[1:]:
        first = compound2(first, Gaussian(link.mean, link.cov))

    joint = Gaussian(
        np.concatenate([np.asarray(link.mean, dtype=float) for link in chain]),
        linalg.block_diag(*[np.asarray(link.cov, dtype=float) for link in chain]),
    )
    f_batch = chain_function(len(chain))
    mc = monte_carlo_moments(f_batch, joint, n_samples, seed, angle_outputs=(2,), reference=first.mean)
    mean_errors, variance_errors = _relative_errors(first, mc)
    report = ValidationReport(
        first_order=first,
        monte_carlo=mc,
        mean_errors=mean_errors,
        variance_errors=variance_errors,
        standard_errors=np.sqrt(np.diag(mc.cov) / n_samples),
        n_samples=n_samples,
    )

    if second_order:
        def f(x):
            return f_batch(x[np.newaxis, :])[0]
        jacobian = finite_difference_jacobian(f, joint.mean, angle_outputs=(2,))
        hessians = finite_difference_hessian(f, joint.mean, angle_outputs=(2,))
        second = propagate_second_order(f, jacobian, hessians, joint, angle_outputs=(2,))
        report.second_order = second
        report.second_order_mean_errors, report.second_order_variance_errors = _relative_errors(second, mc)

    logger.info(f"Validation with {n_samples} samples: max relative error {report.max_error:.4%}")
    return report


def default_chain(sigma_deg: float, translation_sigma: float) -> List[RelationLink]:
    """The two-link chain used by the validation command."""
    sigma = math.radians(sigma_deg)
    return [
        RelationLink.isotropic([x, y, math.radians(phi)], translation_sigma, sigma)
        for x, y, phi in Config.VALIDATION_DEFAULTS["chain"]
    ]
