"""
Tests for sensor and pseudo-sensor models
"""

import math
import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from stochmap.config import Config
from stochmap.data_models import Convention, EntityId, EntityKind, Gaussian
from stochmap.exceptions import DuplicateEntity, InvalidValue, KindMismatch, NonPositiveDefinite, ShapeMismatch
from stochmap.propagate import finite_difference_jacobian
from stochmap.sensors import (
    predict_measurement,
    rectangle_h,
    rectangle_sensor,
    regularize_noise,
    relative_point_sensor,
    relative_pose_sensor,
)
from stochmap.stochastic_map import new_map
from stochmap.transforms3d import Pose3, compose3, inverse3, singularity_margin

POSE2_A = EntityId(1, EntityKind.POSE2, "a")
POSE2_B = EntityId(2, EntityKind.POSE2, "b")
POINT_I, POINT_J, POINT_K, POINT_L = (
    EntityId(n, EntityKind.POINT2, name) for n, name in enumerate("ijkl", start=3)
)


def check_against_finite_differences(sensor, blocks, atol=1e-6):
    sizes = np.cumsum([0] + [b.size for b in blocks])
    x = np.concatenate(blocks)

    def split(v):
        return [v[sizes[k]:sizes[k + 1]] for k in range(len(blocks))]

    numeric = finite_difference_jacobian(lambda v: sensor.evaluate(split(v)), x, angle_outputs=sensor.angle_components)
    np.testing.assert_allclose(sensor.stacked_jacobian(blocks), numeric, atol=atol)


def random_pose2(rng) -> np.ndarray:
    return np.array([*rng.uniform(-10, 10, 2), rng.uniform(-math.pi, math.pi)])


# Noise handling

def test_regularize_noise_lifts_singular_covariance():
    lifted = regularize_noise(np.zeros((3, 3)), 3)
    np.testing.assert_array_equal(lifted, Config.EXACT_CONSTRAINT_EPS * np.eye(3))

    regular = np.diag([0.1, 0.2])
    np.testing.assert_array_equal(regularize_noise(regular, 2), regular)


def test_regularize_noise_rejects_bad_matrices():
    with pytest.raises(ShapeMismatch):
        regularize_noise(np.eye(2), 3)
    with pytest.raises(InvalidValue):
        regularize_noise([[1.0, 0.5], [0.0, 1.0]], 2)
    with pytest.raises(InvalidValue):
        regularize_noise([[1.0, math.nan], [math.nan, 1.0]], 2)
    with pytest.raises(NonPositiveDefinite):
        regularize_noise(np.diag([1.0, -1.0]), 2)


# Relative sensors

def test_relative_pose_sensor_refuses_bad_pairs():
    with pytest.raises(DuplicateEntity):
        relative_pose_sensor(POSE2_A, POSE2_A, np.eye(3))
    with pytest.raises(KindMismatch):
        relative_pose_sensor(POSE2_A, POINT_I, np.eye(3))
    with pytest.raises(KindMismatch):
        relative_point_sensor(POINT_I, POSE2_A, np.eye(2))


def test_relative_pose_sensor_jacobian():
    rng = np.random.default_rng(0)
    sensor = relative_pose_sensor(POSE2_A, POSE2_B, np.eye(3))
    assert sensor.angle_components == (2,)
    for _ in range(200):
        check_against_finite_differences(sensor, [random_pose2(rng), random_pose2(rng)])


@pytest.mark.parametrize("convention", [Convention.EULER, Convention.RPY])
def test_spatial_relative_pose_sensor_jacobian(convention):
    rng = np.random.default_rng(1)
    i = EntityId(1, EntityKind.POSE3, "a", convention)
    j = EntityId(2, EntityKind.POSE3, "b", convention)
    sensor = relative_pose_sensor(i, j, np.eye(6))
    checked = 0
    while checked < 200:
        a = Pose3.from_array(np.concatenate([rng.uniform(-5, 5, 3), rng.uniform(-math.pi, math.pi, 3)]), convention)
        b = Pose3.from_array(np.concatenate([rng.uniform(-5, 5, 3), rng.uniform(-math.pi, math.pi, 3)]), convention)
        if min(singularity_margin(p) for p in (a, b, inverse3(a), compose3(inverse3(a), b))) < 0.2:
            continue
        checked += 1
        check_against_finite_differences(sensor, [a.as_array(), b.as_array()], atol=1e-5)


def test_relative_point_sensor_value_and_jacobian():
    sensor = relative_point_sensor(POSE2_A, POINT_I, np.eye(2))
    np.testing.assert_allclose(sensor.evaluate([np.array([1.0, 2.0, math.pi / 2]), np.array([1.0, 3.0])]),
                               [1.0, 0.0], atol=1e-12)
    rng = np.random.default_rng(2)
    for _ in range(200):
        check_against_finite_differences(sensor, [random_pose2(rng), rng.uniform(-10, 10, 2)])


# Rectangle constraint

def test_rectangle_of_true_rectangle_is_zero():
    corners = [np.array(p) for p in ([4.0, -1.0], [4.0, 1.0], [2.0, 1.0], [2.0, -1.0])]
    np.testing.assert_array_equal(rectangle_h(*corners), np.zeros(3))

    angle = 0.7
    R = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
    rotated = [R @ p + np.array([3.0, -2.0]) for p in corners]
    np.testing.assert_allclose(rectangle_h(*rotated), np.zeros(3), atol=1e-12)


def test_rectangle_detects_skew():
    skewed = [np.array(p) for p in ([4.0, -1.0], [4.0, 1.0], [2.5, 1.0], [2.0, -1.0])]
    h = rectangle_h(*skewed)
    assert h[0] == pytest.approx(0.5)
    assert h[2] == pytest.approx(0.0)

    sheared = [np.array(p) for p in ([4.0, -1.0], [4.0, 1.0], [2.0, 1.5], [2.0, -0.5])]
    assert rectangle_h(*sheared)[2] == pytest.approx(-1.0)


def test_rectangle_jacobian():
    sensor = rectangle_sensor(POINT_I, POINT_J, POINT_K, POINT_L, 1e-8 * np.eye(3))
    rng = np.random.default_rng(3)
    for _ in range(200):
        check_against_finite_differences(sensor, [rng.uniform(-10, 10, 2) for _ in range(4)])


def test_rectangle_sensor_validates_corners():
    with pytest.raises(DuplicateEntity):
        rectangle_sensor(POINT_I, POINT_I, POINT_K, POINT_L, np.eye(3))
    with pytest.raises(KindMismatch):
        rectangle_sensor(POSE2_A, POINT_J, POINT_K, POINT_L, np.eye(3))


def test_zero_noise_constraint_is_floored():
    sensor = rectangle_sensor(POINT_I, POINT_J, POINT_K, POINT_L, np.zeros((3, 3)))
    np.testing.assert_array_equal(sensor.noise_cov, Config.EXACT_CONSTRAINT_EPS * np.eye(3))


# Predicted measurements

def test_predict_measurement():
    m = new_map("2d")
    m.move_entity(m.anchor, Gaussian([1.0, 0.0, 0.2], np.diag([0.01, 0.01, 0.001])))
    target = m.add_object_world(Gaussian([4.0, 2.0, -0.5], np.diag([0.02, 0.03, 0.002])))
    noise = np.diag([0.001, 0.001, 0.0001])
    sensor = relative_pose_sensor(m.anchor, target, noise)

    predicted = predict_measurement(m, sensor)
    h, H = m.linearize(sensor)
    np.testing.assert_allclose(predicted.mean, m.extract_relation(m.anchor, target).mean, atol=1e-15)
    np.testing.assert_allclose(predicted.cov, H @ m.cov @ H.T + noise, atol=1e-14)
    np.testing.assert_allclose(predicted.cov - noise, m.extract_relation(m.anchor, target).cov, atol=1e-14)


def test_predict_measurement_matches_sampling():
    m = new_map("2d")
    m.move_entity(m.anchor, Gaussian([1.0, 0.0, 0.2], np.diag([0.01, 0.01, 0.0005])))
    target = m.add_object_world(Gaussian([4.0, 2.0, -0.5], np.diag([0.02, 0.03, 0.0008])))
    noise = np.diag([0.001, 0.001, 0.0001])
    sensor = relative_pose_sensor(m.anchor, target, noise)
    predicted = predict_measurement(m, sensor)

    rng = np.random.default_rng(7)
    n = 40_000
    states = rng.multivariate_normal(m.mean, m.cov, n)
    noises = rng.multivariate_normal(np.zeros(3), noise, n)
    si, sj = m.index(m.anchor), m.index(target)
    samples = np.array([sensor.evaluate([x[si], x[sj]]) for x in states]) + noises
    offsets = samples - predicted.mean
    offsets[:, 2] = np.arctan2(np.sin(offsets[:, 2]), np.cos(offsets[:, 2]))

    scale = np.sqrt(np.diag(predicted.cov))
    np.testing.assert_allclose(offsets.mean(axis=0), np.zeros(3), atol=0.05 * scale.max())
    np.testing.assert_allclose(np.cov(offsets, rowvar=False), predicted.cov, atol=0.05 * predicted.cov.max())
