"""
Tests for the stochastic map: insertion, motion, filtering, extraction and gating
"""

import math
import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from stochmap.data_models import EntityKind, Gaussian
from stochmap.exceptions import (
    DuplicateEntity,
    InnovationNotPD,
    InvalidValue,
    KindMismatch,
    ShapeMismatch,
    UnknownEntity,
)
from stochmap.propagate import chi_square_quantile, monte_carlo_moments
from stochmap.sensors import SensorModel, relative_pose_sensor
from stochmap.stochastic_map import ANCHOR_NAME, new_map
from stochmap.transforms2d import Pose2, compose2, compose2_batch, jac_compose2

MOTION_NOISE = np.diag([0.01, 0.01, math.radians(3) ** 2])
SENSE_NOISE = np.diag([0.0025, 0.0025, math.radians(2) ** 2])


def identity_sensor(entity, noise):
    """Direct observation of a point entity: h(x) = x."""
    return SensorModel(
        touched=(entity,),
        h=lambda blocks: blocks[0],
        jacobian=lambda blocks: [np.eye(2)],
        noise_cov=noise,
        meas_dim=2,
        name="direct",
    )


def correlated_map():
    """Anchor plus two objects, with the robot moved so that every block is populated."""
    m = new_map("2d")
    m.add_object_relative(m.anchor, Gaussian([2.0, 1.0, 0.5], SENSE_NOISE), name="object1")
    m.move_entity(m.anchor, Gaussian([3.0, 0.0, 0.3], MOTION_NOISE))
    m.add_object_relative(m.anchor, Gaussian([1.5, 1.0, -0.2], SENSE_NOISE), name="object2")
    m.move_entity(m.anchor, Gaussian([1.0, 0.5, 0.1], MOTION_NOISE))
    return m


def assert_symmetric(m):
    np.testing.assert_allclose(m.cov, m.cov.T, atol=1e-10)
    assert np.linalg.eigvalsh(m.cov)[0] > -1e-10


# Creation and insertion

def test_new_map_holds_only_the_anchor():
    m = new_map("2d")
    assert [e.name for e in m.entities] == [ANCHOR_NAME]
    np.testing.assert_array_equal(m.mean, np.zeros(3))
    np.testing.assert_array_equal(m.cov, np.zeros((3, 3)))

    spatial = new_map("3d-euler")
    assert spatial.dim == 6
    np.testing.assert_array_equal(spatial.cov, np.zeros((6, 6)))


@pytest.mark.parametrize("mode", ["2d", "3d-euler", "3d-rpy"])
def test_anchor_relation_to_itself_is_exact_identity(mode):
    m = new_map(mode)
    relation = m.extract_relation(m.anchor, m.anchor)
    np.testing.assert_array_equal(relation.mean, np.zeros(m.dim))
    np.testing.assert_array_equal(relation.cov, np.zeros((m.dim, m.dim)))


def test_unknown_mode_is_refused():
    with pytest.raises(InvalidValue):
        new_map("4d")


def test_add_object_world_builds_block_diagonal_system():
    m = new_map("2d")
    prior = Gaussian([2.0, 1.0, 0.5], SENSE_NOISE)
    entity = m.add_object_world(prior, name="object1")
    np.testing.assert_array_equal(m.mean, [0, 0, 0, 2.0, 1.0, 0.5])
    np.testing.assert_array_equal(m.block(m.anchor, entity), np.zeros((3, 3)))
    np.testing.assert_array_equal(m.block(entity, entity), SENSE_NOISE)

    other = m.add_object_world(Gaussian([5.0, 5.0, 0.0], SENSE_NOISE))
    np.testing.assert_array_equal(m.block(entity, other), np.zeros((3, 3)))
    assert other.name == "object2"


def test_add_object_world_checks_dimension_and_kind():
    m = new_map("2d")
    with pytest.raises(ShapeMismatch):
        m.add_object_world(Gaussian([1.0, 2.0], np.eye(2)))
    with pytest.raises(KindMismatch):
        m.add_object_world(Gaussian(np.zeros(6), np.eye(6)), kind=EntityKind.POSE3)
    with pytest.raises(KindMismatch):
        new_map("3d-euler").add_object_world(Gaussian([1.0, 2.0], np.eye(2)), kind=EntityKind.POINT2)


def test_duplicate_and_unknown_names():
    m = new_map("2d")
    m.add_object_world(Gaussian.exact([1.0, 0.0, 0.0]), name="door")
    with pytest.raises(DuplicateEntity):
        m.add_object_world(Gaussian.exact([2.0, 0.0, 0.0]), name="door")
    with pytest.raises(UnknownEntity) as excinfo:
        m.entity("window")
    assert excinfo.value.entity == "window"


def test_relative_insertion_from_exact_anchor_equals_world_insertion():
    relative, world = new_map("2d"), new_map("2d")
    z = Gaussian([2.0, 1.0, 0.5], SENSE_NOISE)
    relative.add_object_relative(relative.anchor, z)
    world.add_object_world(z)
    np.testing.assert_allclose(relative.mean, world.mean, atol=1e-15)
    np.testing.assert_allclose(relative.cov, world.cov, atol=1e-15)


def test_sensing_after_motion():
    m = new_map("2d")
    control = Gaussian([3.0, 0.0, 0.3], MOTION_NOISE)
    m.move_entity(m.anchor, control)
    z2 = Gaussian([1.5, 1.0, -0.2], SENSE_NOISE)
    object2 = m.add_object_relative(m.anchor, z2)

    robot, z = Pose2(3.0, 0.0, 0.3), Pose2(1.5, 1.0, -0.2)
    J = jac_compose2(robot, z, compose2(robot, z))
    j1, j2 = J[:, :3], J[:, 3:]
    np.testing.assert_allclose(m.mean[m.index(object2)], compose2(robot, z).as_array(), atol=1e-15)
    np.testing.assert_allclose(
        m.block(object2, object2), j1 @ MOTION_NOISE @ j1.T + j2 @ SENSE_NOISE @ j2.T, atol=1e-15
    )
    np.testing.assert_allclose(m.block(m.anchor, object2), MOTION_NOISE @ j1.T, atol=1e-15)


def test_relative_insertion_matches_sampled_joint_distribution():
    base_cov = np.diag([0.01, 0.02, math.radians(1) ** 2])
    rel_cov = np.diag([0.004, 0.003, math.radians(1) ** 2])
    m = new_map("2d")
    base = m.add_object_world(Gaussian([1.0, 2.0, 0.4], base_cov), name="base")
    new = m.add_object_relative(base, Gaussian([2.0, -1.0, 0.3], rel_cov), name="new")

    joint_input = Gaussian(
        [1.0, 2.0, 0.4, 2.0, -1.0, 0.3],
        np.block([[base_cov, np.zeros((3, 3))], [np.zeros((3, 3)), rel_cov]]),
    )
    sampled = monte_carlo_moments(
        lambda s: np.hstack([s[:, :3], compose2_batch(s[:, :3], s[:, 3:])]),
        joint_input, 200_000, seed=9, angle_outputs=(2, 5),
    )
    idx = np.r_[m.index(base), m.index(new)]
    predicted = m.cov[np.ix_(idx, idx)]
    scale = np.sqrt(np.outer(np.diag(predicted), np.diag(predicted)))
    assert np.all(np.abs(sampled.cov - predicted) <= 0.03 * scale)


# Motion

def test_null_motion_leaves_map_unchanged():
    m = correlated_map()
    before = m.copy()
    m.move_entity(m.anchor, Gaussian.exact([0.0, 0.0, 0.0]))
    np.testing.assert_allclose(m.mean, before.mean, atol=1e-15)
    np.testing.assert_allclose(m.cov, before.cov, atol=1e-15)


def test_moving_the_exact_anchor():
    m = new_map("2d")
    landmark = m.add_object_world(Gaussian([5.0, 5.0, 0.0], SENSE_NOISE))
    m.move_entity(m.anchor, Gaussian([3.0, 0.0, 0.3], MOTION_NOISE))
    np.testing.assert_allclose(m.block(m.anchor, m.anchor), MOTION_NOISE, atol=1e-15)
    np.testing.assert_array_equal(m.block(m.anchor, landmark), np.zeros((3, 3)))


def test_motion_only_touches_the_moved_row_and_column():
    m = correlated_map()
    before = m.copy()
    object1, object2 = m.entity("object1"), m.entity("object2")
    m.move_entity(object2, Gaussian([0.5, -0.2, 0.1], MOTION_NOISE))

    for a in m.entities:
        for b in m.entities:
            if object2 in (a, b):
                continue
            np.testing.assert_array_equal(m.block(a, b), before.block(a, b))
    assert not np.allclose(m.block(object2, m.anchor), before.block(object2, m.anchor))
    np.testing.assert_array_equal(m.mean[m.index(object1)], before.mean[before.index(object1)])
    np.testing.assert_array_equal(m.block(object2, m.anchor), m.block(m.anchor, object2).T)
    assert_symmetric(m)


def test_points_cannot_move():
    m = new_map("2d")
    point = m.add_object_world(Gaussian([1.0, 1.0], np.eye(2)), kind=EntityKind.POINT2)
    with pytest.raises(KindMismatch):
        m.move_entity(point, Gaussian.exact([1.0, 0.0, 0.0]))


# Filtering

def test_scalar_fusion():
    m = new_map("2d")
    point = m.add_object_world(Gaussian([0.0, 0.0], np.eye(2)), kind=EntityKind.POINT2)
    diagnostics = m.ekf_update(identity_sensor(point, np.eye(2)), [1.0, 1.0])
    np.testing.assert_array_equal(m.mean[m.index(point)], [0.5, 0.5])
    np.testing.assert_array_equal(m.block(point, point), 0.5 * np.eye(2))
    assert diagnostics.mahalanobis_sq == 1.0
    assert diagnostics.iterations == 1


def test_scalar_fusion_with_iterated_update():
    m = new_map("2d")
    point = m.add_object_world(Gaussian([0.0, 0.0], np.eye(2)), kind=EntityKind.POINT2)
    diagnostics = m.iekf_update(identity_sensor(point, np.eye(2)), [1.0, 1.0])
    np.testing.assert_array_equal(m.mean[m.index(point)], [0.5, 0.5])
    np.testing.assert_array_equal(m.block(point, point), 0.5 * np.eye(2))
    assert diagnostics.mahalanobis_sq == 1.0
    assert diagnostics.converged


def test_independent_linear_updates_commute():
    prior = Gaussian([1.0, -2.0], np.array([[0.5, 0.1], [0.1, 0.3]]))
    first = (np.diag([0.2, 0.4]), [1.3, -1.7])
    second = (np.array([[0.1, 0.02], [0.02, 0.05]]), [0.8, -2.2])

    results = []
    for order in ((first, second), (second, first)):
        m = new_map("2d")
        point = m.add_object_world(prior, kind=EntityKind.POINT2)
        for noise, z in order:
            m.ekf_update(identity_sensor(point, noise), z)
        results.append(m)

    np.testing.assert_allclose(results[0].mean, results[1].mean, atol=1e-12)
    np.testing.assert_allclose(results[0].cov, results[1].cov, atol=1e-12)


def test_gain_limits():
    quiet = new_map("2d")
    point = quiet.add_object_world(Gaussian([0.0, 0.0], np.eye(2)), kind=EntityKind.POINT2)
    quiet.ekf_update(identity_sensor(point, 1e8 * np.eye(2)), [1.0, 1.0])
    assert np.all(np.abs(quiet.mean[quiet.index(point)]) < 1e-7)

    trusted = new_map("2d")
    point = trusted.add_object_world(Gaussian([0.0, 0.0], 1e8 * np.eye(2)), kind=EntityKind.POINT2)
    trusted.ekf_update(identity_sensor(point, np.eye(2)), [1.0, 1.0])
    np.testing.assert_allclose(trusted.mean[trusted.index(point)], [1.0, 1.0], atol=1e-7)


def test_update_never_increases_uncertainty():
    m = correlated_map()
    before = m.copy()
    sensor = relative_pose_sensor(m.anchor, m.entity("object1"), SENSE_NOISE)
    expected = m.extract_relation(m.anchor, m.entity("object1")).mean
    m.ekf_update(sensor, expected + np.array([0.05, -0.03, 0.02]))
    assert np.trace(m.cov) <= np.trace(before.cov) + 1e-12
    assert np.all(np.diag(m.cov) <= np.diag(before.cov) + 1e-12)
    assert_symmetric(m)


def test_update_back_propagates_through_cross_covariances():
    m = correlated_map()
    before = m.copy()
    object2 = m.entity("object2")
    sensor = relative_pose_sensor(m.anchor, m.entity("object1"), SENSE_NOISE)
    m.ekf_update(sensor, m.extract_relation(m.anchor, m.entity("object1")).mean)
    assert np.linalg.det(m.block(object2, object2)) < np.linalg.det(before.block(object2, object2))


def test_iterated_update_equals_ekf_for_linear_sensor():
    ekf, iekf, loose = (new_map("2d") for _ in range(3))
    for m in (ekf, iekf, loose):
        m.add_object_world(Gaussian([0.3, -0.4], [[1.0, 0.2], [0.2, 0.5]]), kind=EntityKind.POINT2, name="p")
    z = [1.0, 0.5]
    ekf.ekf_update(identity_sensor(ekf.entity("p"), 0.3 * np.eye(2)), z)
    diagnostics = iekf.iekf_update(identity_sensor(iekf.entity("p"), 0.3 * np.eye(2)), z)
    single = loose.iekf_update(identity_sensor(loose.entity("p"), 0.3 * np.eye(2)), z, tol=math.inf)

    assert diagnostics.iterations == 1
    assert diagnostics.converged
    assert single.iterations == 1
    for m in (iekf, loose):
        np.testing.assert_allclose(m.mean, ekf.mean, atol=1e-12)
        np.testing.assert_allclose(m.cov, ekf.cov, atol=1e-12)


def test_iterated_update_flags_non_convergence():
    m = correlated_map()
    sensor = relative_pose_sensor(m.anchor, m.entity("object1"), SENSE_NOISE)
    z = m.extract_relation(m.anchor, m.entity("object1")).mean + np.array([0.5, 0.5, 0.2])
    diagnostics = m.iekf_update(sensor, z, tol=0.0, max_iter=2)
    assert not diagnostics.converged
    assert diagnostics.iterations == 2
    with pytest.raises(InvalidValue):
        m.iekf_update(sensor, z, max_iter=0)


def test_update_rejects_singular_innovation():
    m = new_map("2d")
    point = m.add_object_world(Gaussian.exact([0.0, 0.0]), kind=EntityKind.POINT2)
    sensor = identity_sensor(point, np.eye(2))
    object.__setattr__(sensor, "noise_cov", np.zeros((2, 2)))
    with pytest.raises(InnovationNotPD):
        m.ekf_update(sensor, [1.0, 1.0])


def test_measurement_shape_is_checked():
    m = new_map("2d")
    point = m.add_object_world(Gaussian([0.0, 0.0], np.eye(2)), kind=EntityKind.POINT2)
    with pytest.raises(ShapeMismatch):
        m.ekf_update(identity_sensor(point, np.eye(2)), [1.0, 1.0, 1.0])


# Extraction and gating

def test_relation_from_exact_anchor_is_world_estimate():
    m = new_map("2d")
    prior = Gaussian([2.0, 1.0, 0.5], SENSE_NOISE)
    entity = m.add_object_world(prior)
    relation = m.extract_relation(m.anchor, entity)
    np.testing.assert_allclose(relation.mean, prior.mean, atol=1e-15)
    np.testing.assert_allclose(relation.cov, prior.cov, atol=1e-15)


def test_relation_of_fully_correlated_pair_is_certain():
    m = new_map("2d")
    first = m.add_object_world(Gaussian([2.0, 1.0, 0.5], SENSE_NOISE))
    second = m.add_object_relative(first, Gaussian.exact([0.0, 0.0, 0.0]))
    relation = m.extract_relation(first, second)
    np.testing.assert_allclose(relation.mean, np.zeros(3), atol=1e-15)
    np.testing.assert_allclose(relation.cov, np.zeros((3, 3)), atol=1e-12)


def test_relation_of_a_point_to_itself_is_refused():
    m = new_map("2d")
    point = m.add_object_world(Gaussian([1.0, 1.0], np.eye(2)), kind=EntityKind.POINT2)
    with pytest.raises(KindMismatch):
        m.extract_relation(point, point)


def test_relations_use_cross_covariances():
    m = correlated_map()
    robot, object2 = m.anchor, m.entity("object2")
    relation = m.extract_relation(robot, object2)
    uncorrelated = m.copy()
    s1, s2 = uncorrelated.index(robot), uncorrelated.index(object2)
    uncorrelated.cov[s1, s2] = 0.0
    uncorrelated.cov[s2, s1] = 0.0
    assert not np.allclose(relation.cov, uncorrelated.extract_relation(robot, object2).cov)


def test_gate_accepts_the_expected_measurement():
    m = correlated_map()
    expected = m.extract_relation(m.anchor, m.entity("object1"))
    accept, d2 = m.mahalanobis_gate(expected, expected.mean, SENSE_NOISE)
    assert accept
    assert d2 == 0.0


def test_gate_threshold_and_rejection():
    m = correlated_map()
    expected = m.extract_relation(m.anchor, m.entity("object1"))
    S = expected.cov + SENSE_NOISE
    direction = np.array([1.0, 0.0, 0.0])
    unit = direction / math.sqrt(direction @ np.linalg.solve(S, direction))
    threshold = chi_square_quantile(0.999, 3)
    assert threshold == pytest.approx(16.266, abs=1e-3)

    inside, d2 = m.mahalanobis_gate(expected, expected.mean + 0.99 * math.sqrt(threshold) * unit, SENSE_NOISE)
    assert inside and d2 < threshold
    outside, d2 = m.mahalanobis_gate(expected, expected.mean + 1.01 * math.sqrt(threshold) * unit, SENSE_NOISE)
    assert not outside and d2 > threshold


def test_gate_wraps_the_angle_innovation():
    m = new_map("2d")
    prior = Gaussian([1.0, 0.0, math.pi - 0.01], SENSE_NOISE)
    entity = m.add_object_world(prior)
    expected = m.extract_relation(m.anchor, entity)
    accept, d2 = m.mahalanobis_gate(expected, [1.0, 0.0, -math.pi + 0.01], SENSE_NOISE)
    assert accept
    assert d2 < 1.0


@pytest.mark.parametrize("mode", ["3d-euler", "3d-rpy"])
def test_spatial_map_round_trip(mode):
    m = new_map(mode)
    noise = np.diag([0.01, 0.01, 0.01, 1e-4, 1e-4, 1e-4])
    rel = Gaussian([1.0, 2.0, 0.5, 0.4, 0.8, -0.3], noise)
    entity = m.add_object_relative(m.anchor, rel)
    m.move_entity(m.anchor, Gaussian([0.5, 0.0, 0.1, 0.2, 0.6, 0.1], noise))
    relation = m.extract_relation(m.anchor, entity)
    assert relation.dim == 6
    assert np.all(np.isfinite(relation.cov))
    assert_symmetric(m)
