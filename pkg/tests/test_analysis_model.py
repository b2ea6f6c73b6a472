from pathlib import Path

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from py_tefs.models.analysis_model import (ALIGN_NONE, ALIGN_RIGID, ALIGN_SIMILARITY, REPORT_FIELDS, Trajectory,
                                           align_trajectory, ape, associate, evaluate, format_reports,
                                           read_reports_csv, rpe, rpe_fixed_distance, scale_correct, traj_length,
                                           umeyama_align, write_reports_csv)
from py_tefs.utils.dataset_manager import read_trajectory
from py_tefs.utils.errors import AssociationError, DegenerateConfigurationError, TrajectoryError
from py_tefs.utils.geometry_utils import PoseSE3

FIXTURES = Path(__file__).parent / 'fixtures'


def random_trajectory(count=50, seed=0, step=1.0):
    """Smooth planar poses with a gently wandering heading."""
    rng = np.random.default_rng(seed)
    heading = np.cumsum(rng.normal(0.0, 0.05, size=count))
    xy = np.cumsum(step * np.column_stack((np.cos(heading), np.sin(heading))), axis=0)
    return [PoseSE3.from_yaw(h, (x, y, 0.0)) for h, (x, y) in zip(heading, xy)]


@pytest.fixture
def gt():
    poses = random_trajectory(60, seed=1)
    return Trajectory.from_poses(np.arange(60) * 0.1, poses)


def _moved(trajectory, pose, scale=1.0):
    return trajectory.transformed(pose.rotation, pose.translation, scale)


def test_trajectory_rejects_bad_timestamps():
    with pytest.raises(TrajectoryError):
        Trajectory([0.0, 0.0], np.tile(np.eye(4), (2, 1, 1)))
    with pytest.raises(TrajectoryError):
        Trajectory([0.0, 1.0], np.tile(np.eye(4), (3, 1, 1)))


def test_traj_length():
    trajectory = read_trajectory(str(FIXTURES / 'gt_poses.txt'))
    assert traj_length(trajectory) == pytest.approx(2.0)
    with pytest.raises(TrajectoryError):
        traj_length(trajectory.subset(np.array([0])))


def test_golden_shifted_pair():
    gt = read_trajectory(str(FIXTURES / 'gt_poses.txt'))
    est = read_trajectory(str(FIXTURES / 'est_shifted.txt'))
    meters, percent = ape(est, gt, ALIGN_NONE)
    assert (meters.mean, meters.median, meters.rmse, meters.max) == pytest.approx((1.0, 1.0, 1.0, 1.0))
    assert percent.mean == pytest.approx(50.0)
    assert meters.alignment == ALIGN_NONE
    translation, rotation = rpe(est, gt)
    assert translation.max == pytest.approx(0.0, abs=1e-12)
    assert rotation.max == pytest.approx(0.0, abs=1e-9)


def test_collinear_ground_truth_falls_back_to_no_alignment():
    gt = read_trajectory(str(FIXTURES / 'gt_poses.txt'))
    est = read_trajectory(str(FIXTURES / 'est_shifted.txt'))
    with pytest.raises(DegenerateConfigurationError):
        ape(est, gt, ALIGN_RIGID)
    reports = evaluate(est, gt, ALIGN_RIGID)
    assert reports[0].metric == 'APE_m'
    assert reports[0].alignment == ALIGN_NONE


def test_association_by_nearest_timestamp(gt):
    est = Trajectory(gt.timestamps[::2] + 0.01, gt.poses[::2])
    est_index, gt_index = associate(est, gt)
    np.testing.assert_array_equal(est_index, np.arange(len(est)))
    np.testing.assert_array_equal(gt_index, np.arange(0, 60, 2))
    with pytest.raises(AssociationError):
        associate(Trajectory(gt.timestamps + 100.0, gt.poses), gt)


def test_unmatched_poses_are_counted(gt):
    extra = Trajectory(np.concatenate((gt.timestamps, [100.0])),
                       np.concatenate((gt.poses, gt.poses[-1:])))
    meters, _ = ape(extra, gt, ALIGN_NONE)
    assert meters.matched == 60
    assert meters.unmatched == 1


@pytest.mark.parametrize("align, scale", [(ALIGN_RIGID, 1.0), (ALIGN_SIMILARITY, 2.5)])
def test_umeyama_recovers_transform(gt, align, scale):
    poses = np.array(gt.poses)
    poses[:, 2, 3] = np.sin(np.arange(len(poses)) * 0.3)
    gt = Trajectory(gt.timestamps, poses)
    rotation = Rotation.from_euler('zyx', [40.0, 10.0, -5.0], degrees=True).as_matrix()
    translation = np.array([3.0, -2.0, 1.0])
    # gt = scale · R · est + t
    est_poses = np.array(poses)
    est_poses[:, :3, :3] = rotation.T @ poses[:, :3, :3]
    est_poses[:, :3, 3] = (gt.positions - translation) @ rotation / scale
    est = Trajectory(gt.timestamps, est_poses)

    recovered_r, recovered_t, recovered_s = umeyama_align(est, gt, with_scale=(align == ALIGN_SIMILARITY))
    np.testing.assert_allclose(recovered_r, rotation, atol=1e-9)
    np.testing.assert_allclose(recovered_t, translation, atol=1e-9)
    assert recovered_s == pytest.approx(scale)
    meters, _ = ape(est, gt, align)
    assert meters.max < 1e-9


def test_ape_matches_brute_force_reference(gt):
    rng = np.random.default_rng(3)
    noisy = np.array(gt.poses)
    noisy[:, :3, 3] += rng.normal(0.0, 0.2, size=(len(noisy), 3))
    est = Trajectory(gt.timestamps, noisy)
    meters, _ = ape(est, gt, ALIGN_RIGID)

    est_c = est.positions - est.positions.mean(axis=0)
    gt_c = gt.positions - gt.positions.mean(axis=0)
    rotation, _ = Rotation.align_vectors(gt_c, est_c)
    errors = np.linalg.norm(rotation.apply(est_c) - gt_c, axis=1)
    assert meters.rmse == pytest.approx(np.sqrt(np.mean(errors ** 2)), rel=1e-9)
    assert meters.max == pytest.approx(errors.max(), rel=1e-9)


def test_rigid_ape_is_invariant_to_a_common_transform(gt):
    rng = np.random.default_rng(4)
    noisy = np.array(gt.poses)
    noisy[:, :3, 3] += rng.normal(0.0, 0.1, size=(len(noisy), 3))
    est = Trajectory(gt.timestamps, noisy)
    transform = PoseSE3(Rotation.from_euler('z', 70.0, degrees=True).as_matrix(), (10.0, 5.0, 0.0))
    before, _ = ape(est, gt, ALIGN_RIGID)
    after, _ = ape(_moved(est, transform), _moved(gt, transform), ALIGN_RIGID)
    assert after.rmse == pytest.approx(before.rmse, rel=1e-9)


def test_rpe_is_invariant_to_moving_the_estimate(gt):
    transform = PoseSE3(Rotation.from_euler('z', 25.0, degrees=True).as_matrix(), (1.0, 2.0, 3.0))
    moved = Trajectory(gt.timestamps, np.array([transform.as_matrix() @ p for p in gt.poses]))
    translation, rotation = rpe(moved, gt)
    assert translation.max < 1e-9
    assert rotation.max < 1e-6


def test_rpe_localizes_a_perturbation(gt):
    perturbed = np.array(gt.poses)
    perturbed[30, :3, 3] += perturbed[30, :3, :3] @ np.array([0.1, 0.0, 0.0])
    translation, _ = rpe(Trajectory(gt.timestamps, perturbed), gt)
    assert translation.max == pytest.approx(0.1)
    assert translation.median == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(TrajectoryError):
        rpe(gt, gt, delta=60)


def test_fixed_distance_rpe():
    poses = [PoseSE3.from_yaw(0.0, (float(x), 0.0, 0.0)) for x in range(151)]
    straight = Trajectory.from_poses(np.arange(151.0), poses)
    translation, rotation = rpe_fixed_distance(straight, straight)
    assert translation.metric == 'RPE_trans_100m'
    assert rotation.metric == 'RPE_rot_100m'
    assert translation.max == pytest.approx(0.0, abs=1e-12)
    assert rpe_fixed_distance(straight.subset(np.arange(50)), straight) is None


def test_scale_correct(gt):
    halved = np.array(gt.poses)
    halved[:, :3, 3] *= 0.5
    est = Trajectory(gt.timestamps, halved)
    corrected = scale_correct(est, gt)
    assert traj_length(corrected) == pytest.approx(traj_length(gt))
    np.testing.assert_allclose(corrected.poses[:, :3, :3], gt.poses[:, :3, :3])
    still = Trajectory(gt.timestamps, np.tile(np.eye(4), (len(gt), 1, 1)))
    with pytest.raises(TrajectoryError):
        scale_correct(still, gt)


def test_align_rejects_unknown_mode(gt):
    with pytest.raises(ValueError):
        align_trajectory(gt, gt, 'affine')


def test_stationary_trajectories_evaluate_to_zero():
    still = Trajectory(np.arange(5.0), np.tile(np.eye(4), (5, 1, 1)))
    reports = evaluate(still, still, ALIGN_RIGID)
    assert [r.metric for r in reports] == ['APE_m', 'APE_pct', 'RPE_trans', 'RPE_rot']
    assert all(r.max == 0.0 for r in reports)


def test_reports_csv_round_trip(gt, tmp_path):
    reports = evaluate(gt, gt, ALIGN_RIGID)
    path = tmp_path / 'report.csv'
    write_reports_csv(reports, str(path), extra={'method': 'tefs'})
    rows = read_reports_csv(str(path))
    assert len(rows) == len(reports)
    assert list(rows[0]) == ['method'] + list(REPORT_FIELDS)
    assert rows[0]['method'] == 'tefs'
    assert float(rows[0]['rmse']) == reports[0].rmse
    text = format_reports(reports, title='gt vs gt')
    assert text.splitlines()[0] == 'gt vs gt'
    assert 'APE_pct' in text
