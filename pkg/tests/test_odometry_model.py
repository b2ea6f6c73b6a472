import json

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from py_tefs.controllers.capture_controller import CaptureController
from py_tefs.models.analysis_model import ALIGN_NONE, ape
from py_tefs.models.odometry_model import (DEFAULT_MAX_DEPTH_M, chain_motions, check_disparity_sign,
                                           estimate_motion, frame_points, run_vo, triangulate_stereo,
                                           write_vo_result)
from py_tefs.models.render_model import get_condition
from py_tefs.models.sample_model import DUAL_VIEWPORT, FeatureObservation
from py_tefs.utils.dataset_manager import CalibrationRecord, read_trajectory
from py_tefs.utils.errors import DegenerateConfigurationError, StereoGeometryError
from py_tefs.utils.geometry_utils import PoseSE3


@pytest.fixture
def calib():
    k = np.array([[500.0, 0.0, 500.0], [0.0, 500.0, 250.0], [0.0, 0.0, 1.0]])
    return CalibrationRecord(k, 0.54, (1000, 500), 0.01, 600.0)


def _observe(point, calib, beacon_id=0):
    x, y, z = point
    u = calib.fx * x / z + calib.cx
    v = calib.fy * y / z + calib.cy
    return FeatureObservation(beacon_id, (u, v), (u - calib.fx * calib.baseline_m / z, v))


def test_triangulation(calib):
    obs = FeatureObservation(0, (527.0, 250.0), (500.0, 250.0))
    np.testing.assert_allclose(triangulate_stereo(obs, calib), [0.54, 0.0, 10.0])


def test_triangulation_rejects_non_positive_disparity(calib):
    for right_u in (527.0, 530.0):
        with pytest.raises(StereoGeometryError):
            triangulate_stereo(FeatureObservation(0, (527.0, 250.0), (right_u, 250.0)), calib)


def test_frame_points_skip_far_and_invalid(calib):
    near = _observe((1.0, 0.5, 10.0), calib, 0)
    far = _observe((1.0, 0.5, DEFAULT_MAX_DEPTH_M + 5.0), calib, 1)
    invalid = FeatureObservation(2, (100.0, 100.0), (100.0, 100.0))
    points = frame_points([near, far, invalid], calib)
    assert list(points) == [0]
    np.testing.assert_allclose(points[0], [1.0, 0.5, 10.0], atol=1e-9)
    assert set(frame_points([near, far], calib, max_depth_m=None)) == {0, 1}


def test_motion_recovery():
    rng = np.random.default_rng(0)
    motion = PoseSE3(Rotation.from_euler('y', 3.0, degrees=True).as_matrix(), (0.1, 0.0, 1.2))
    points_prev = {i: p for i, p in enumerate(rng.uniform([-5, -2, 4], [5, 2, 30], size=(12, 3)))}
    points_curr = {i: motion.inverse().transform_points(p[np.newaxis])[0] for i, p in points_prev.items()}
    estimate, residual = estimate_motion(points_prev, points_curr)
    assert estimate.allclose(motion, atol=1e-9)
    assert residual < 1e-9


def test_motion_needs_three_shared_points():
    points = {0: np.array([0.0, 0.0, 5.0]), 1: np.array([1.0, 0.0, 5.0]), 2: np.array([0.0, 1.0, 6.0])}
    with pytest.raises(DegenerateConfigurationError):
        estimate_motion(points, {0: points[0], 1: points[1]})


def test_swapped_labels_rejected(calib):
    observed = [_observe((x, 0.0, 8.0), calib, i) for i, x in enumerate((-1.0, 0.0, 1.0))]
    check_disparity_sign([observed])
    swapped = [FeatureObservation(o.beacon_id, o.right, o.left) for o in observed]
    with pytest.raises(StereoGeometryError):
        check_disparity_sign([swapped])


def test_holes_repeat_the_previous_motion():
    step = PoseSE3(np.eye(3), (0.0, 0.0, 1.0))
    base = {i: np.array(p, dtype=float) for i, p in enumerate([[0, 0, 10], [2, 0, 12], [0, 2, 14], [-2, 1, 9]])}
    frames = [base]
    for _ in range(2):
        frames.append({i: step.inverse().transform_points(p[np.newaxis])[0] for i, p in frames[-1].items()})
    frames.append({0: frames[-1][0]})
    result = chain_motions(PoseSE3.identity(), np.arange(4.0), frames)
    assert result.holes == [3]
    assert result.partial and result.trajectory.partial
    np.testing.assert_allclose(result.trajectory.positions[:, 2], [0.0, 1.0, 2.0, 3.0], atol=1e-9)
    assert len(result.residuals) == 2


def test_hole_at_start_holds_still():
    frames = [{0: np.zeros(3)}, {0: np.zeros(3)}]
    result = chain_motions(PoseSE3.identity(), np.arange(2.0), frames)
    assert result.holes == [1]
    np.testing.assert_allclose(result.trajectory.positions[1], 0.0)


@pytest.fixture
def dual_dataset(make_settings, tmp_path):
    directory = tmp_path / 'dual'
    CaptureController(make_settings(), DUAL_VIEWPORT, get_condition('sunny')).run_session(str(directory))
    return str(directory)


def test_noise_free_odometry_tracks_ground_truth(dual_dataset):
    result = run_vo(dual_dataset)
    assert not result.partial
    gt = read_trajectory(dual_dataset)
    assert len(result.trajectory) == len(gt)
    meters, _ = ape(result.trajectory, gt, ALIGN_NONE)
    assert meters.max < 1e-6


def test_noise_is_seeded(dual_dataset):
    first = run_vo(dual_dataset, noise_sigma=0.5, seed=1)
    second = run_vo(dual_dataset, noise_sigma=0.5, seed=1)
    other = run_vo(dual_dataset, noise_sigma=0.5, seed=2)
    np.testing.assert_array_equal(first.trajectory.poses, second.trajectory.poses)
    assert not np.array_equal(first.trajectory.poses, other.trajectory.poses)


def test_vo_result_files(dual_dataset, tmp_path):
    result = run_vo(dual_dataset)
    write_vo_result(str(tmp_path / 'vo'), result)
    summary = json.loads((tmp_path / 'vo' / 'summary.json').read_text())
    assert summary['frames'] == len(result.trajectory)
    assert summary['partial'] is False
    reread = read_trajectory(str(tmp_path / 'vo'))
    np.testing.assert_allclose(reread.positions, result.trajectory.positions, atol=1e-9)
