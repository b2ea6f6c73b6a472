import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from py_tefs.utils.errors import DegenerateConfigurationError
from py_tefs.utils.geometry_utils import (VEHICLE_FROM_CAMERA, PoseSE3, fit_rigid_transform, is_rotation,
                                          translation_offset)


def _random_pose(rng):
    rotation = Rotation.random(random_state=int(rng.integers(1 << 31))).as_matrix()
    return PoseSE3(rotation, rng.normal(size=3) * 5.0)


def test_compose_and_inverse_give_identity():
    rng = np.random.default_rng(0)
    pose = _random_pose(rng)
    assert (pose @ pose.inverse()).allclose(PoseSE3.identity())
    assert (pose.inverse() @ pose).allclose(PoseSE3.identity())


def test_transform_points_round_trip():
    rng = np.random.default_rng(1)
    pose = _random_pose(rng)
    points = rng.normal(size=(10, 3))
    np.testing.assert_allclose(pose.inverse_transform_points(pose.transform_points(points)), points, atol=1e-12)


def test_from_matrix_rejects_non_rotation():
    matrix = np.eye(4)
    matrix[0, 0] = 2.0
    with pytest.raises(ValueError):
        PoseSE3.from_matrix(matrix)
    with pytest.raises(ValueError):
        PoseSE3.from_matrix(np.eye(3))


def test_from_matrix_accepts_3x4():
    matrix = np.hstack([np.eye(3), [[1.0], [2.0], [3.0]]])
    pose = PoseSE3.from_matrix(matrix)
    np.testing.assert_array_equal(pose.translation, [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(pose.as_matrix()[:3], matrix)


def test_from_yaw_rotates_about_z():
    pose = PoseSE3.from_yaw(np.pi / 2, [0.0, 0.0, 0.0])
    np.testing.assert_allclose(pose.transform_points([[1.0, 0.0, 0.0]]), [[0.0, 1.0, 0.0]], atol=1e-12)


def test_vehicle_from_camera_is_rotation():
    assert is_rotation(VEHICLE_FROM_CAMERA)
    # camera z (forward) maps to vehicle x (forward)
    np.testing.assert_array_equal(VEHICLE_FROM_CAMERA @ [0.0, 0.0, 1.0], [1.0, 0.0, 0.0])


def test_translation_offset_is_in_local_frame():
    pose = PoseSE3.from_yaw(np.pi / 2, [5.0, 0.0, 0.0])
    moved = translation_offset(pose, [1.0, 0.0, 0.0])
    np.testing.assert_allclose(moved.translation, [5.0, 1.0, 0.0], atol=1e-12)
    assert pose.distance_to(moved) == pytest.approx(1.0)


def test_fit_rigid_transform_recovers_pose():
    rng = np.random.default_rng(2)
    pose = _random_pose(rng)
    source = rng.normal(size=(20, 3)) * 10.0
    target = pose.transform_points(source)
    rotation, translation, scale = fit_rigid_transform(source, target)
    assert scale == 1.0
    np.testing.assert_allclose(rotation, pose.rotation, atol=1e-9)
    np.testing.assert_allclose(translation, pose.translation, atol=1e-9)


def test_fit_rigid_transform_recovers_scale():
    rng = np.random.default_rng(3)
    pose = _random_pose(rng)
    source = rng.normal(size=(20, 3))
    target = 2.5 * source @ pose.rotation.T + pose.translation
    rotation, translation, scale = fit_rigid_transform(source, target, with_scale=True)
    assert scale == pytest.approx(2.5, abs=1e-9)
    np.testing.assert_allclose(rotation, pose.rotation, atol=1e-9)


def test_fit_rigid_transform_never_reflects():
    rng = np.random.default_rng(4)
    source = rng.normal(size=(12, 3))
    target = source * np.array([1.0, 1.0, -1.0])
    rotation, _, _ = fit_rigid_transform(source, target)
    assert np.linalg.det(rotation) == pytest.approx(1.0)


def test_fit_rigid_transform_degenerate_inputs():
    with pytest.raises(DegenerateConfigurationError):
        fit_rigid_transform(np.zeros((2, 3)), np.zeros((2, 3)))
    line = np.outer(np.arange(5.0), [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateConfigurationError):
        fit_rigid_transform(line, line)
    with pytest.raises(ValueError):
        fit_rigid_transform(np.zeros((4, 3)), np.zeros((5, 3)))
