"""
Scenario file format

A scenario is a JSON document with a map mode, a seed and an ordered list of
steps. Each step is an object whose "kind" field selects one of SenseNew,
Move, SenseKnown, Constraint or Query. Angles are radians unless converted
with ScenarioFile.in_radians(); covariances are either nested rows or a
flat row-major list.
"""

import math
from typing import Annotated, Dict, List, Literal, Optional, Union

import numpy as np
import orjson
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .config import Config
from .data_models import EntityKind
from .stochastic_map import ANCHOR_NAME

MapMode = Literal["2d", "3d-euler", "3d-rpy"]
EntityChoice = Literal["pose", "point"]


def _to_matrix(value) -> List[List[float]]:
    """Accept nested rows or a flat row-major list of n² numbers."""
    array = np.asarray(value, dtype=float)
    if array.ndim == 1:
        n = math.isqrt(array.size)
        if n * n != array.size or n == 0:
            raise ValueError(f"flat covariance of length {array.size} is not square")
        array = array.reshape(n, n)
    if array.ndim != 2 or array.shape[0] != array.shape[1]:
        raise ValueError(f"covariance must be square, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise ValueError("covariance entries must be finite")
    scale = max(1.0, float(np.max(np.abs(array)))) if array.size else 1.0
    if np.max(np.abs(array - array.T), initial=0.0) > Config.SYMMETRY_TOL * scale:
        raise ValueError("covariance is not symmetric")
    sym = 0.5 * (array + array.T)
    slack = Config.PSD_RELATIVE_TOL * max(float(np.trace(sym)), 0.0) + Config.PSD_ABSOLUTE_TOL
    if array.size and float(np.linalg.eigvalsh(sym)[0]) < -slack:
        raise ValueError("covariance is not positive semi-definite")
    return array.tolist()


class _Step(BaseModel):
    model_config = ConfigDict(extra="forbid")

    @field_validator("noise_cov", mode="before", check_fields=False)
    @classmethod
    def _check_cov(cls, value):
        return _to_matrix(value)


class SenseNewStep(_Step):
    """
    The actor senses an object it has not mapped yet.

    Attributes:
        name (str): Name of the new entity
        actor (str): Pose taking the measurement
        true_relation (List[float]): Actual relation of the object to the actor (simulator only)
        noise_cov (List[List[float]]): Measurement noise covariance
        entity (EntityChoice): "pose" or "point"
        gate_against (List[str]): Known entities the measurement is gated against
        gate_p (float): Gate probability
    """
    kind: Literal["SenseNew"]
    name: str
    actor: str = ANCHOR_NAME
    true_relation: List[float]
    noise_cov: List[List[float]]
    entity: EntityChoice = "pose"
    gate_against: List[str] = []
    gate_p: float = Field(default=Config.GATE_PROBABILITY, gt=0.0, lt=1.0)


class MoveStep(_Step):
    """
    The actor makes an uncertain relative motion y = u + w.

    Attributes:
        actor (str): Pose that moves
        control_mean (List[float]): Commanded motion u
        noise_cov (List[List[float]]): Covariance of the motion error w
    """
    kind: Literal["Move"]
    actor: str = ANCHOR_NAME
    control_mean: List[float]
    noise_cov: List[List[float]]


class SenseKnownStep(_Step):
    """
    The actor re-senses a mapped entity; the measurement is gated, then fused.

    Attributes:
        actor (str): Pose taking the measurement
        target (str): Mapped entity being measured
        noise_cov (List[List[float]]): Measurement noise covariance
        gate_p (float): Gate probability
    """
    kind: Literal["SenseKnown"]
    actor: str = ANCHOR_NAME
    target: str
    noise_cov: List[List[float]]
    gate_p: float = Field(default=Config.GATE_PROBABILITY, gt=0.0, lt=1.0)


class ConstraintStep(_Step):
    """
    A geometric constraint applied as a pseudo-sensor with measurement 0.

    Attributes:
        constraint (str): Constraint type, currently "rectangle"
        targets (List[str]): Corner points, counter-clockwise from the lower right
        noise_cov (List[List[float]]): Tolerance of the constraint
    """
    kind: Literal["Constraint"]
    constraint: Literal["rectangle"] = "rectangle"
    targets: List[str] = Field(min_length=4, max_length=4)
    noise_cov: List[List[float]]


class QueryStep(_Step):
    """Extract the relation of entity j seen from entity i."""
    kind: Literal["Query"]
    i: str
    j: str


Step = Annotated[
    Union[SenseNewStep, MoveStep, SenseKnownStep, ConstraintStep, QueryStep],
    Field(discriminator="kind"),
]


class ScenarioFile(BaseModel):
    """
    Scenario document.

    Attributes:
        mode (MapMode): "2d", "3d-euler" or "3d-rpy"
        seed (int): Seed of every random draw in the run
        steps (List[Step]): Steps executed in order
    """
    model_config = ConfigDict(extra="forbid")

    mode: MapMode = "2d"
    seed: int = Field(default=0, ge=0, lt=2 ** 64)
    steps: List[Step] = []

    @property
    def pose_kind(self) -> EntityKind:
        return EntityKind(Config.MODES[self.mode]["pose_kind"])

    def entity_kinds(self) -> Dict[str, EntityKind]:
        """Kind of every entity the scenario declares, anchor included."""
        kinds = {ANCHOR_NAME: self.pose_kind}
        for step in self.steps:
            if isinstance(step, SenseNewStep):
                kinds[step.name] = self.pose_kind if step.entity == "pose" else EntityKind.POINT2
        return kinds

    @model_validator(mode="after")
    def _check_references(self):
        pose_kind = self.pose_kind
        known = {ANCHOR_NAME: pose_kind}

        def need(name: str, path: str, pose: bool = False) -> EntityKind:
            if name not in known:
                raise ValueError(f"{path}: unknown entity {name!r}")
            if pose and not known[name].is_pose:
                raise ValueError(f"{path}: {name!r} is a point and cannot act as a frame")
            return known[name]

        def need_size(values, size: int, path: str) -> None:
            if len(values) != size:
                raise ValueError(f"{path}: expected {size} values, got {len(values)}")

        for index, step in enumerate(self.steps):
            at = f"steps.{index}"
            if isinstance(step, SenseNewStep):
                need(step.actor, f"{at}.actor", pose=True)
                if step.name in known:
                    raise ValueError(f"{at}.name: entity {step.name!r} already declared")
                kind = pose_kind if step.entity == "pose" else EntityKind.POINT2
                if kind is EntityKind.POINT2 and pose_kind is not EntityKind.POSE2:
                    raise ValueError(f"{at}.entity: points are only supported in 2d scenarios")
                need_size(step.true_relation, kind.dim, f"{at}.true_relation")
                need_size(step.noise_cov, kind.dim, f"{at}.noise_cov")
                for k, other in enumerate(step.gate_against):
                    if need(other, f"{at}.gate_against.{k}") is not kind:
                        raise ValueError(f"{at}.gate_against.{k}: {other!r} is not a {kind.value}")
                known[step.name] = kind
            elif isinstance(step, MoveStep):
                kind = need(step.actor, f"{at}.actor", pose=True)
                need_size(step.control_mean, kind.dim, f"{at}.control_mean")
                need_size(step.noise_cov, kind.dim, f"{at}.noise_cov")
            elif isinstance(step, SenseKnownStep):
                need(step.actor, f"{at}.actor", pose=True)
                target = need(step.target, f"{at}.target")
                if step.target == step.actor:
                    raise ValueError(f"{at}.target: an entity cannot sense itself")
                need_size(step.noise_cov, target.dim, f"{at}.noise_cov")
            elif isinstance(step, ConstraintStep):
                if len(set(step.targets)) != 4:
                    raise ValueError(f"{at}.targets: corners must be distinct")
                for k, name in enumerate(step.targets):
                    if need(name, f"{at}.targets.{k}") is not EntityKind.POINT2:
                        raise ValueError(f"{at}.targets.{k}: {name!r} is not a point")
                need_size(step.noise_cov, 3, f"{at}.noise_cov")
            elif isinstance(step, QueryStep):
                base = need(step.i, f"{at}.i", pose=step.i != step.j)
                need(step.j, f"{at}.j")
                if step.i == step.j and not base.is_pose:
                    raise ValueError(f"{at}.i: {step.i!r} is a point and has no frame")
        return self

    def in_radians(self) -> "ScenarioFile":
        """Copy of the scenario with angle components converted from degrees."""
        kinds = self.entity_kinds()
        scale = math.pi / 180.0
        steps = []
        for step in self.steps:
            data = step.model_dump()
            if isinstance(step, SenseNewStep):
                angles = kinds[step.name].angle_components
                data["true_relation"] = _scale_vector(step.true_relation, angles, scale)
                data["noise_cov"] = _scale_cov(step.noise_cov, angles, scale)
            elif isinstance(step, MoveStep):
                angles = kinds[step.actor].angle_components
                data["control_mean"] = _scale_vector(step.control_mean, angles, scale)
                data["noise_cov"] = _scale_cov(step.noise_cov, angles, scale)
            elif isinstance(step, SenseKnownStep):
                angles = kinds[step.target].angle_components
                data["noise_cov"] = _scale_cov(step.noise_cov, angles, scale)
            steps.append(data)
        return ScenarioFile.model_validate({"mode": self.mode, "seed": self.seed, "steps": steps})


def _scale_vector(values: List[float], angles, scale: float) -> List[float]:
    out = list(values)
    for idx in angles:
        out[idx] *= scale
    return out


def _scale_cov(cov: List[List[float]], angles, scale: float) -> List[List[float]]:
    factors = np.ones(len(cov))
    factors[list(angles)] = scale
    return (np.asarray(cov) * np.outer(factors, factors)).tolist()


def load_scenario(path, degrees: bool = False) -> ScenarioFile:
    """
    Parse and validate a scenario file.

    Raises:
        pydantic.ValidationError: On schema violations (messages carry field paths)
        OSError: If the file cannot be read
        orjson.JSONDecodeError: On malformed JSON
    """
    with open(path, "rb") as fh:
        scenario = ScenarioFile.model_validate(orjson.loads(fh.read()))
    return scenario.in_radians() if degrees else scenario
