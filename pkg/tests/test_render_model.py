from dataclasses import replace

import numpy as np
import pytest

from py_tefs.models.engine_model import advance_tick, native_pause
from py_tefs.models.render_model import (BACKGROUND_ID, CONDITION_PROFILES, LEFT, RIGHT, CameraRig,
                                         ConditionProfile, RenderModel, apply_condition,
                                         complete_render_tick, force_flash, get_condition, request_camera_swap)
from py_tefs.utils.depth_utils import NDC_CLEAR_VALUE, ndc_to_planar
from py_tefs.utils.errors import ConfigurationError, SwapRejectedError
from py_tefs.utils.geometry_utils import PoseSE3


@pytest.fixture
def rig():
    return CameraRig(image_size=(320, 180))


def test_intrinsics(rig):
    fx, fy, cx, cy = rig.intrinsics()
    assert fx == pytest.approx(160.0)
    assert (cx, cy) == (160.0, 90.0)
    assert rig.camera_matrix()[2, 2] == 1.0


def test_right_camera_sits_one_baseline_to_the_right(rig):
    vehicle = PoseSE3.identity()
    left = rig.camera_pose(vehicle, LEFT)
    right = rig.camera_pose(vehicle, RIGHT)
    # camera x (right) is vehicle -y
    np.testing.assert_allclose(right.translation - left.translation, [0.0, -0.54, 0.0], atol=1e-12)


def test_beacon_on_axis_renders_at_its_depth(rig, beacon_world):
    frame = RenderModel().rasterize(beacon_world, rig, LEFT)
    assert frame.rgb.shape == (180, 320, 3)
    assert frame.object_ids[90, 160] == 0
    assert ndc_to_planar(frame.ndc[90, 160], rig.near_clip_m, rig.far_clip_m) == pytest.approx(9.8, abs=1e-6)
    assert frame.object_ids[-1, 160] == 1
    assert frame.object_ids[0, 0] == BACKGROUND_ID
    assert frame.ndc[0, 0] == NDC_CLEAR_VALUE


def test_right_view_shifts_beacon_left(rig, beacon_world):
    model = RenderModel()
    left = model.rasterize(beacon_world, rig, LEFT)
    right = model.rasterize(beacon_world, rig, RIGHT)
    left_cols = np.flatnonzero((left.object_ids == 0).any(axis=0))
    right_cols = np.flatnonzero((right.object_ids == 0).any(axis=0))
    # disparity f·b/Z = 160·0.54/9.8 ≈ 8.8 px
    assert left_cols.mean() - right_cols.mean() == pytest.approx(160 * 0.54 / 9.8, abs=1.0)


def test_swap_commits_after_next_render_tick(rig, beacon_world):
    rig = request_camera_swap(rig, RIGHT, beacon_world)
    assert rig.active_side == LEFT and rig.pending_swap == RIGHT
    frame = RenderModel().render_view(beacon_world, rig)
    assert frame.side == LEFT
    rig, swapped = complete_render_tick(rig, beacon_world)
    assert swapped and rig.active_side == RIGHT and rig.pending_swap is None


def test_swap_rejected_while_paused(rig, beacon_world):
    paused = native_pause(beacon_world)
    with pytest.raises(SwapRejectedError):
        request_camera_swap(rig, RIGHT, paused)
    pending = request_camera_swap(rig, RIGHT, beacon_world)
    still, swapped = complete_render_tick(pending, paused)
    assert not swapped and still.active_side == LEFT


def test_swap_to_active_side_clears_pending(rig, beacon_world):
    assert request_camera_swap(rig, LEFT, beacon_world).pending_swap is None
    with pytest.raises(ConfigurationError):
        request_camera_swap(rig, 'center', beacon_world)


def test_paused_engine_presents_stale_frame(rig, beacon_world):
    model = RenderModel()
    fresh = model.render_view(beacon_world, rig)
    paused = native_pause(advance_tick(beacon_world))
    stale = model.render_view(paused, rig, RIGHT)
    assert stale.stale
    assert stale.side == LEFT
    assert stale.uni_tick == fresh.uni_tick
    np.testing.assert_array_equal(stale.rgb, fresh.rgb)
    assert model.frames_rendered == 1


def test_stereo_views_share_the_instant(rig, beacon_world):
    left, right = RenderModel().render_stereo_views(beacon_world, rig)
    assert left.uni_tick == right.uni_tick
    assert left.in_game_time == right.in_game_time
    assert (left.side, right.side) == (LEFT, RIGHT)


def _gray_frame(rig, beacon_world, value):
    frame = RenderModel().rasterize(beacon_world, rig, LEFT)
    return replace(frame, rgb=np.full_like(frame.rgb, value))


def test_sunny_condition_is_identity(rig, beacon_world):
    frame = RenderModel().rasterize(beacon_world, rig, LEFT)
    assert apply_condition(frame, get_condition('sunny'), np.random.default_rng(0)) is frame


def test_gamma_darkening(rig, beacon_world):
    frame = _gray_frame(rig, beacon_world, 128)
    darkened = apply_condition(frame, ConditionProfile('dark', gamma_darken=2.2), np.random.default_rng(0))
    assert np.all(darkened.rgb == 56)


def test_conditions_leave_depth_and_ids_alone(rig, beacon_world):
    frame = RenderModel().rasterize(beacon_world, rig, LEFT)
    rainy = apply_condition(frame, get_condition('rain'), np.random.default_rng(1))
    assert not np.array_equal(rainy.rgb, frame.rgb)
    np.testing.assert_array_equal(rainy.ndc, frame.ndc)
    np.testing.assert_array_equal(rainy.object_ids, frame.object_ids)
    assert rainy.camera_pose is frame.camera_pose


def test_flash_saturates_the_frame(rig, beacon_world):
    frame = RenderModel().rasterize(beacon_world, rig, LEFT)
    flashed = apply_condition(frame, force_flash(CONDITION_PROFILES['nightThunderstorm']),
                              np.random.default_rng(2))
    assert np.mean(flashed.rgb == 255) >= 0.99


def test_conditions_are_seeded(rig, beacon_world):
    frame = RenderModel().rasterize(beacon_world, rig, LEFT)
    storm = get_condition('storm')
    first = apply_condition(frame, storm, np.random.default_rng(7))
    second = apply_condition(frame, storm, np.random.default_rng(7))
    np.testing.assert_array_equal(first.rgb, second.rgb)


def test_unknown_condition_rejected():
    assert get_condition('nightThunderstorm') is CONDITION_PROFILES['nightThunderstorm']
    with pytest.raises(ConfigurationError):
        get_condition('fog')
