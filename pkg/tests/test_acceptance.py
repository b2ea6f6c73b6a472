"""End-to-end checks of the headline numbers: offsets, frequencies, depth, metrics and validation."""

import hashlib

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from py_tefs.controllers.capture_controller import (CaptureContext, CaptureController, CaptureSchedule,
                                                    analytic_offsets, run_dual_viewport_cycle, spatial_offset)
from py_tefs.controllers.validation_controller import APE_PCT_DELTA_LIMIT, NAIVE_DEGRADATION_FACTOR, validate_tefs
from py_tefs.models.analysis_model import (ALIGN_NONE, ALIGN_RIGID, ALIGN_SIMILARITY, Trajectory, ape, evaluate,
                                           rpe, scale_correct, traj_length, umeyama_align)
from py_tefs.models.engine_model import STATIC, build_world
from py_tefs.models.odometry_model import run_vo
from py_tefs.models.render_model import CameraRig, get_condition
from py_tefs.models.sample_model import DUAL_VIEWPORT, NAIVE_SWAP, TEFS
from py_tefs.models.settings_model import SettingsModel
from py_tefs.utils.dataset_manager import read_trajectory
from py_tefs.utils.depth_utils import (CAMERA_READY_INLINE, DRAFT_EQ2, PLANAR, RAY, SIM_NATIVE,
                                       DepthConversionProfile, depth_range, depth_to_ndc, ndc_to_depth)
from py_tefs.utils.timebase_utils import cam_freq, game_to_real


@pytest.mark.parametrize("speed_kmh, disparity_s, expected", [
    (10.0, 0.0005, 0.001389),
    (15.0, 0.0005, 0.002083),
    (25.0, 0.0005, 0.003472),
    (120.0, 0.0167, 0.5567),
])
def test_spatial_offsets(speed_kmh, disparity_s, expected):
    assert spatial_offset(speed_kmh / 3.6, disparity_s) == pytest.approx(expected, rel=0.005)


def test_naive_offset_dominates_frame_swap():
    settings = SettingsModel('validation_a')
    settings.apply_overrides(disparity_ms=0.2)
    ratio = analytic_offsets(settings)['naive_to_tefs_ratio']
    assert ratio == pytest.approx(83.5, abs=0.1)


def test_camera_frequency():
    assert cam_freq(2.5, 2880.0) == 12.0
    assert game_to_real(2.5, 2880.0) == pytest.approx(0.08333, abs=1e-5)


def test_sim_native_round_trip_over_clip_range():
    profile = DepthConversionProfile(SIM_NATIVE, 0.01, 600.0)
    depth = np.random.default_rng(0).uniform(0.02, 599.0, size=10 ** 4)
    map_uv = np.full_like(depth, 0.01)
    back = ndc_to_depth(depth_to_ndc(depth, map_uv, profile, PLANAR), map_uv, profile, PLANAR)
    assert np.max(np.abs(back - depth) / depth) < 1e-9


@pytest.mark.parametrize("kind", [DRAFT_EQ2, CAMERA_READY_INLINE])
def test_formula_profiles_round_trip_over_their_valid_ranges(kind):
    profile = DepthConversionProfile(kind, 0.01, 600.0)
    rng = np.random.default_rng(1)
    map_uv = rng.uniform(0.01, 0.0173, size=10 ** 4)
    low, high = depth_range(map_uv, profile, RAY)
    depth = low + rng.uniform(0.0, 1.0, size=map_uv.shape) * (high - low)
    back = ndc_to_depth(depth_to_ndc(depth, map_uv, profile, RAY), map_uv, profile, RAY)
    assert np.max(np.abs(back - depth) / depth) < 1e-9


def _random_poses(rng, count):
    heading = np.cumsum(rng.normal(0.0, 0.1, size=count))
    steps = np.column_stack((np.cos(heading), np.sin(heading), rng.normal(0.0, 0.1, size=count)))
    positions = np.cumsum(steps, axis=0)
    poses = np.tile(np.eye(4), (count, 1, 1))
    poses[:, :3, :3] = Rotation.from_euler('z', heading).as_matrix()
    poses[:, :3, 3] = positions
    return poses


def test_umeyama_construct_and_recover():
    rng = np.random.default_rng(2)
    for case in range(100):
        gt = Trajectory(np.arange(30.0), _random_poses(rng, 30))
        rotation = Rotation.random(random_state=case).as_matrix()
        translation = rng.normal(size=3) * 10.0
        similarity = case % 2 == 1
        scale = rng.uniform(0.2, 5.0) if similarity else 1.0
        est_poses = np.array(gt.poses)
        est_poses[:, :3, 3] = (gt.positions - translation) @ rotation / scale
        est = Trajectory(gt.timestamps, est_poses)
        r, t, s = umeyama_align(est, gt, with_scale=similarity)
        residual = np.linalg.norm(s * est.positions @ r.T + t - gt.positions, axis=1).max()
        assert residual < 1e-9


def _brute_force_ape_rmse(est, gt):
    est_c = est - est.mean(axis=0)
    gt_c = gt - gt.mean(axis=0)
    u, _, vt = np.linalg.svd(gt_c.T @ est_c)
    d = np.diag([1.0, 1.0, np.sign(np.linalg.det(u @ vt))])
    rotation = u @ d @ vt
    errors = [np.linalg.norm(rotation @ e - g) for e, g in zip(est_c, gt_c)]
    return float(np.sqrt(np.mean(np.square(errors))))


def _brute_force_rpe_trans(est, gt):
    errors = []
    for i in range(len(est) - 1):
        est_rel = np.linalg.solve(est[i], est[i + 1])
        gt_rel = np.linalg.solve(gt[i], gt[i + 1])
        errors.append(np.linalg.norm(np.linalg.solve(gt_rel, est_rel)[:3, 3]))
    return float(np.mean(errors))


def test_metrics_match_brute_force_reference():
    rng = np.random.default_rng(3)
    for _ in range(10):
        gt_poses = _random_poses(rng, 40)
        est_poses = np.array(gt_poses)
        est_poses[:, :3, 3] += rng.normal(0.0, 0.3, size=(40, 3))
        est_poses[:, :3, :3] = Rotation.from_rotvec(rng.normal(0.0, 0.02, size=(40, 3))).as_matrix() \
            @ est_poses[:, :3, :3]
        est, gt = Trajectory(np.arange(40.0), est_poses), Trajectory(np.arange(40.0), gt_poses)
        meters, _ = ape(est, gt, ALIGN_RIGID)
        assert meters.rmse == pytest.approx(_brute_force_ape_rmse(est.positions, gt.positions), abs=1e-9)
        translation, _ = rpe(est, gt)
        assert translation.mean == pytest.approx(_brute_force_rpe_trans(est_poses, gt_poses), abs=1e-9)


def test_scale_correct_restores_length():
    rng = np.random.default_rng(4)
    gt = Trajectory(np.arange(50.0), _random_poses(rng, 50))
    shrunk = np.array(gt.poses)
    shrunk[:, :3, 3] *= 0.8
    corrected = scale_correct(Trajectory(gt.timestamps, shrunk), gt)
    assert traj_length(corrected) == pytest.approx(traj_length(gt), rel=1e-9)


@pytest.mark.slow
@pytest.mark.parametrize("scenario", ['validation_a', 'validation_b', 'validation_c'])
def test_frame_swap_matches_dual_viewport(scenario, tmp_path):
    settings = SettingsModel(scenario)
    world = build_world(settings)
    assert world.path.total_length >= 200.0
    result = validate_tefs(settings, str(tmp_path))
    for name in ('APE_pct.mean', 'APE_pct.median', 'APE_pct.rmse', 'APE_pct.max'):
        assert result.deltas[name] <= APE_PCT_DELTA_LIMIT
    assert result.passed
    assert result.offsets['tefs_offset_m'] == pytest.approx(0.001389, abs=1e-6)
    assert result.runs[TEFS].measured_offset_max_m == pytest.approx(0.001389, abs=1e-5)


@pytest.mark.slow
def test_naive_swap_degrades_odometry(tmp_path):
    settings = SettingsModel('naive_degradation')
    result = validate_tefs(settings, str(tmp_path), method=NAIVE_SWAP)
    assert result.deltas['naive_to_tefs_APE_pct_ratio'] >= NAIVE_DEGRADATION_FACTOR
    assert result.passed


@pytest.mark.slow
def test_kilometer_loop_trajectory_length(tmp_path):
    settings = SettingsModel('validation_1km')
    settings.apply_overrides(image_size=[32, 18])
    assert build_world(settings).path.total_length == pytest.approx(1000.0, abs=1e-3)
    CaptureController(settings, TEFS, get_condition('sunny')).run_session(str(tmp_path))
    assert traj_length(read_trajectory(str(tmp_path))) == pytest.approx(1000.0, abs=10.0)


def _box_entry_depths(origin, directions, low, high):
    """Ray parameter where each ray enters the box, NaN for rays that miss it."""
    with np.errstate(divide='ignore', invalid='ignore'):
        t1 = (low - origin) / directions
        t2 = (high - origin) / directions
    t_near = np.fmax.reduce(np.fmin(t1, t2), axis=1)
    t_far = np.fmin.reduce(np.fmax(t1, t2), axis=1)
    return np.where((t_near <= t_far + 1e-9) & (t_far > 0.0), t_near, np.nan)


@pytest.mark.slow
def test_disparity_agrees_with_rendered_depth():
    settings = SettingsModel('validation_a')
    world = build_world(settings)
    rig = CameraRig.from_settings(settings.section('rig'))
    context = CaptureContext.create(rig, CaptureSchedule.from_settings(settings.section('capture')),
                                    get_condition('sunny'), depth_semantics=PLANAR)
    fx, fy, cx, cy = rig.intrinsics()
    beacons = [b for b in world.scene.beacons if b.motion == STATIC]
    checked, corresponding = 0, 0
    for index in range(20):
        world, rig, sample = run_dual_viewport_cycle(world, rig, context, index)
        left_pose, right_pose = sample.left.camera_pose, sample.right.camera_pose
        for beacon in beacons:
            v, u = np.nonzero(sample.left.object_ids == beacon.object_id)
            if not len(u):
                continue
            rays = np.column_stack(((u + 0.5 - cx) / fx, (v + 0.5 - cy) / fy, np.ones(len(u))))
            center, half = np.asarray(beacon.center), np.asarray(beacon.size) / 2.0
            z = _box_entry_depths(left_pose.translation, rays @ left_pose.rotation.T, center - half, center + half)
            hit = np.isfinite(z)
            surface = left_pose.transform_points(rays[hit] * z[hit, np.newaxis])
            in_right = right_pose.inverse_transform_points(surface)
            u_right = fx * in_right[:, 0] / in_right[:, 2] + cx
            v_right = fy * in_right[:, 1] / in_right[:, 2] + cy
            disparity = u[hit] + 0.5 - u_right
            stereo_depth = fx * rig.baseline_m / disparity
            half_pixel = 0.5 * stereo_depth ** 2 / (fx * rig.baseline_m)
            rendered = sample.left_depth[v[hit], u[hit]]
            assert np.all(np.abs(rendered - stereo_depth) <= half_pixel)
            checked += int(hit.sum())

            width, height = rig.image_size
            cols, rows = np.floor(u_right).astype(int), np.floor(v_right).astype(int)
            inside = (cols >= 0) & (cols < width) & (rows >= 0) & (rows < height)
            corresponding += int(np.sum(sample.right.object_ids[rows[inside], cols[inside]] == beacon.object_id))
    assert checked > 0
    # the right view shows the same beacon at the corresponding pixel, save silhouette edges and occlusions
    assert corresponding >= 0.5 * checked


@pytest.mark.slow
@pytest.mark.parametrize("condition", ['rain', 'storm'])
def test_identical_runs_hash_identically(condition, tmp_path):
    def tree_hash(root):
        digest = hashlib.sha256()
        for path in sorted(p for p in root.rglob('*') if p.is_file()):
            digest.update(str(path.relative_to(root)).encode())
            digest.update(path.read_bytes())
        return digest.hexdigest()

    settings = SettingsModel('test_scene')
    settings.apply_overrides(image_size=[160, 90])
    for name in ('a', 'b'):
        CaptureController(settings, TEFS, get_condition(condition)).run_session(str(tmp_path / name))
    assert tree_hash(tmp_path / 'a') == tree_hash(tmp_path / 'b')


@pytest.mark.slow
def test_odometry_error_grows_with_noise(tmp_path):
    settings = SettingsModel('test_scene')
    settings.apply_overrides(image_size=[320, 180])
    CaptureController(settings, DUAL_VIEWPORT, get_condition('sunny')).run_session(str(tmp_path))
    gt = read_trajectory(str(tmp_path))
    errors = []
    for sigma in (0.0, 0.25, 1.0):
        meters, _ = ape(run_vo(str(tmp_path), noise_sigma=sigma, seed=3).trajectory, gt, ALIGN_NONE)
        errors.append(meters.rmse)
    assert errors[0] < 1e-6
    assert errors[0] <= errors[1] <= errors[2]


@pytest.mark.slow
def test_stationary_methods_evaluate_identically(tmp_path):
    settings = SettingsModel('test_scene')
    settings.apply_overrides(speed_kmh=0.0)
    reports = {}
    for method in (TEFS, DUAL_VIEWPORT):
        directory = str(tmp_path / method)
        CaptureController(settings, method, get_condition('sunny')).run_session(directory)
        reports[method] = evaluate(run_vo(directory).trajectory, read_trajectory(directory), ALIGN_SIMILARITY)
    for tefs, dual in zip(reports[TEFS], reports[DUAL_VIEWPORT]):
        assert tefs.metric == dual.metric
        assert tefs.rmse == pytest.approx(dual.rmse, abs=1e-12)
