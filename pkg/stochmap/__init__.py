"""
stochmap: estimation of uncertain spatial relationships
"""

from .config import Config
from .data_models import Convention, Ellipse, EntityId, EntityKind, Gaussian, UpdateDiagnostics
from .exceptions import (
    ConventionMismatch,
    CorrelationOutOfRange,
    DuplicateEntity,
    InnovationNotPD,
    InvalidValue,
    KindMismatch,
    NonPositiveDefinite,
    NumericalFailure,
    ScenarioError,
    ShapeMismatch,
    SingularOrientation,
    StepFailed,
    StochasticMapError,
    UnknownEntity,
    ZeroVariance,
)
from .transforms2d import Pose2, compose2, inverse2, normalize_angle, tail_to_tail2
from .transforms3d import Pose3, compose3, inverse3, tail_to_tail3
from .stochastic_map import StochasticMap, new_map
from .sensors import (
    SensorModel,
    predict_measurement,
    rectangle_sensor,
    relative_point_sensor,
    relative_pose_sensor,
)
from .scenario import RelationLink, Snapshot, ValidationReport, monte_carlo_validate, run
from .schema import ScenarioFile, load_scenario

__all__ = [
    'Config',
    'Convention',
    'Ellipse',
    'EntityId',
    'EntityKind',
    'Gaussian',
    'UpdateDiagnostics',
    'ConventionMismatch',
    'CorrelationOutOfRange',
    'DuplicateEntity',
    'InnovationNotPD',
    'InvalidValue',
    'KindMismatch',
    'NonPositiveDefinite',
    'NumericalFailure',
    'ScenarioError',
    'ShapeMismatch',
    'SingularOrientation',
    'StepFailed',
    'StochasticMapError',
    'UnknownEntity',
    'ZeroVariance',
    'Pose2',
    'compose2',
    'inverse2',
    'normalize_angle',
    'tail_to_tail2',
    'Pose3',
    'compose3',
    'inverse3',
    'tail_to_tail3',
    'StochasticMap',
    'new_map',
    'SensorModel',
    'predict_measurement',
    'rectangle_sensor',
    'relative_point_sensor',
    'relative_pose_sensor',
    'RelationLink',
    'Snapshot',
    'ValidationReport',
    'monte_carlo_validate',
    'run',
    'ScenarioFile',
    'load_scenario',
]
