"""
Capture controller for Py-TeFS.

Runs stereo capture cycles on a single-viewport engine and writes whole
sessions to disk. Three methods are available:

- ``tefs``: freeze scripted time with timeScale 0, natively pause for the left
  capture, swap cameras during the pseudo-pause, pause again for the right
  capture, then restore timeScale.
- ``naiveSwap``: capture left on one frame and right on the next, with no time
  manipulation.
- ``dualViewport``: render both cameras from the same instant, an oracle only
  a dual-viewport engine can provide.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from py_tefs.models.engine_model import (World, advance_tick, apply_swap_residual, build_world, native_pause,
                                         native_resume, set_time_scale, vehicle_pose_at, world_shift)
from py_tefs.models.render_model import (LEFT, RIGHT, CameraRig, ConditionProfile, FrameBuffer, RenderModel,
                                         apply_condition, complete_render_tick, request_camera_swap)
from py_tefs.models.sample_model import (DUAL_VIEWPORT, METHODS, NAIVE_SWAP, TEFS, FeatureObservation,
                                         StereoSample)
from py_tefs.models.settings_model import SettingsModel
from py_tefs.utils.dataset_manager import CalibrationRecord, DatasetManager, DatasetManifest
from py_tefs.utils.depth_utils import DepthConversionProfile, compute_map_uv, ndc_to_depth, ndc_to_planar
from py_tefs.utils.errors import ConfigurationError, ProtocolViolationError, TefsError
from py_tefs.utils.timebase_utils import cam_freq

logger = logging.getLogger('py-tefs.capture')

DRIVING = 'driving'
PRESET_PSEUDO_PAUSE = 'presetPseudoPause'
PAUSED_LEFT_CAPTURE = 'pausedLeftCapture'
SWAP_WAIT = 'swapWait'
PAUSED_RIGHT_CAPTURE = 'pausedRightCapture'
RESTORE = 'restore'
PHASES = (DRIVING, PRESET_PSEUDO_PAUSE, PAUSED_LEFT_CAPTURE, SWAP_WAIT, PAUSED_RIGHT_CAPTURE, RESTORE)
CAPTURE_PHASES = {LEFT: PAUSED_LEFT_CAPTURE, RIGHT: PAUSED_RIGHT_CAPTURE}
SIDE_CODES = {LEFT: 0, RIGHT: 1}

TIME_TOLERANCE = 1e-9


@dataclass
class CaptureCycleState:
    """Phase bookkeeping of one TeFS cycle; phases may only move forward in order."""

    cycle_start_tick: int
    cycle_length: int = 10
    phase: str = DRIVING

    def advance(self, phase: str) -> None:
        if PHASES.index(phase) != PHASES.index(self.phase) + 1:
            raise ProtocolViolationError(f"Cannot move to {phase}", phase=self.phase)
        self.phase = phase

    def check_capture(self, side: str) -> None:
        if self.phase != CAPTURE_PHASES[side]:
            raise ProtocolViolationError(f"{side} capture outside {CAPTURE_PHASES[side]}", phase=self.phase)


@dataclass(frozen=True)
class CaptureSchedule:
    """Tick offsets of one capture cycle, relative to the cycle start."""

    cycle_ticks: int = 10
    preset_tick: int = 7
    left_tick: int = 8
    right_tick: int = 10
    naive_frame_time_s: float = 0.0167
    naive_extra_latency_frames: int = 0

    @classmethod
    def from_settings(cls, capture: Dict) -> "CaptureSchedule":
        return cls(int(capture['cycle_ticks']), int(capture['preset_tick']), int(capture['left_tick']),
                   int(capture['right_tick']), float(capture['naive_frame_time_s']),
                   int(capture['naive_extra_latency_frames']))

    def in_game_span(self, method: str, tick_duration: float, swap_residual: float) -> float:
        """In-game seconds from a cycle start to its last capture."""
        if method == TEFS:
            return self.preset_tick * tick_duration + swap_residual
        if method == NAIVE_SWAP:
            return (self.left_tick + 1 + self.naive_extra_latency_frames) * tick_duration
        return self.preset_tick * tick_duration

    def pair_spacing(self, method: str, tick_duration: float, swap_residual: float) -> float:
        """In-game seconds between consecutive stereo pairs."""
        if method == TEFS:
            return self.preset_tick * tick_duration + swap_residual
        if method == NAIVE_SWAP:
            return self.cycle_ticks * tick_duration
        return self.preset_tick * tick_duration


@dataclass
class CaptureContext:
    """Everything a cycle needs besides the world and rig."""

    renderer: RenderModel
    schedule: CaptureSchedule
    depth_profile: DepthConversionProfile
    map_uv: np.ndarray
    condition: ConditionProfile
    seed: int = 0
    depth_semantics: str = 'ray'
    stats: Dict[str, int] = field(default_factory=lambda: {'ticks': 0, 'swaps': 0, 'renders': 0, 'cycles': 0})

    @classmethod
    def create(cls, rig: CameraRig, schedule: CaptureSchedule, condition: ConditionProfile,
               seed: int = 0, depth_kind: str = 'simNative', depth_semantics: str = 'ray') -> "CaptureContext":
        return cls(RenderModel(), schedule, DepthConversionProfile(depth_kind, rig.near_clip_m, rig.far_clip_m),
                   compute_map_uv(rig), condition, seed, depth_semantics)


def spatial_offset(speed_mps: float, temporal_disparity_s: float) -> float:
    """Displacement in meters between two captures ``temporal_disparity_s`` apart."""
    if speed_mps < 0 or temporal_disparity_s < 0:
        raise ConfigurationError("Speed and temporal disparity must be non-negative")
    return speed_mps * temporal_disparity_s


def _tick(world: World, rig: CameraRig, context: CaptureContext) -> Tuple[World, CameraRig]:
    """One engine step followed by its render tick.

    A swap that completes while timeScale is 0 settles the engine's swap residual.
    """
    world = advance_tick(world)
    rig, swapped = complete_render_tick(rig, world)
    context.stats['ticks'] += 1
    if swapped:
        context.stats['swaps'] += 1
        if world.clock.time_scale == 0.0:
            world = apply_swap_residual(world)
    return world, rig


def _ticks(world: World, rig: CameraRig, context: CaptureContext, count: int) -> Tuple[World, CameraRig]:
    for _ in range(count):
        world, rig = _tick(world, rig, context)
    return world, rig


def _render(world: World, rig: CameraRig, context: CaptureContext, side: Optional[str] = None) -> FrameBuffer:
    frame = context.renderer.render_view(world, rig, side)
    if not frame.stale:
        context.stats['renders'] += 1
    return frame


def _grab(frame: FrameBuffer, world: World, side: str, state: Optional[CaptureCycleState] = None) -> FrameBuffer:
    """Read the presented frame, checking it belongs to the current tick and camera."""
    if state is not None:
        state.check_capture(side)
    phase = state.phase if state is not None else None
    if frame.side != side:
        raise ProtocolViolationError(f"Expected the {side} camera, the {frame.side} camera is presented", phase)
    if frame.uni_tick != world.clock.uni_tick:
        raise ProtocolViolationError(f"Presented frame is from uniTick {frame.uni_tick}, "
                                     f"engine is at {world.clock.uni_tick}", phase)
    return frame


def _check_driving(world: World, rig: CameraRig) -> None:
    clock = world.clock
    if clock.native_paused or clock.time_scale != 1.0:
        raise ProtocolViolationError("Cycle must start with the engine running at timeScale 1", DRIVING)
    if rig.active_side != LEFT and rig.pending_swap != LEFT:
        raise ProtocolViolationError("Cycle must start on the left camera", DRIVING)


def _depth(frame: FrameBuffer, context: CaptureContext) -> np.ndarray:
    return ndc_to_depth(frame.ndc, context.map_uv, context.depth_profile, context.depth_semantics)


def _degrade(frame: FrameBuffer, context: CaptureContext, index: int, side: str) -> FrameBuffer:
    rng = np.random.default_rng([context.seed, index, SIDE_CODES[side]])
    return apply_condition(frame, context.condition, rng)


def project_beacons(world: World, frame: FrameBuffer, rig: CameraRig) -> Dict[int, Tuple[float, float]]:
    """Pixel coordinates of the beacon centers visible in ``frame``.

    A beacon counts as visible when its center projects inside the image within
    the clip range and the depth buffer at that pixel is not closer than the
    beacon's front surface.
    """
    beacons = world.scene.beacons
    if not beacons:
        return {}
    fx, fy, cx, cy = rig.intrinsics()
    width, height = rig.image_size
    index = {obj.object_id: i for i, obj in enumerate(world.scene.objects)}
    displacements = world.scene.displacements(world.clock)
    centers = np.array([np.asarray(b.center) + displacements[index[b.object_id]] for b in beacons])
    points = frame.camera_pose.inverse_transform_points(centers)
    visible = {}
    for beacon, (x, y, z) in zip(beacons, points):
        if not rig.near_clip_m < z < rig.far_clip_m:
            continue
        u, v = fx * x / z + cx, fy * y / z + cy
        if not (0.0 <= u < width and 0.0 <= v < height):
            continue
        ndc = frame.ndc[int(v), int(u)]
        surface = math.inf if ndc > 1.0 else float(ndc_to_planar(ndc, rig.near_clip_m, rig.far_clip_m))
        if surface + TIME_TOLERANCE >= z - max(beacon.size) * math.sqrt(3.0) / 2.0:
            visible[beacon.object_id] = (float(u), float(v))
    return visible


def match_observations(left: Dict[int, Tuple[float, float]],
                       right: Dict[int, Tuple[float, float]]) -> Tuple[FeatureObservation, ...]:
    return tuple(FeatureObservation(beacon_id, left[beacon_id], right[beacon_id])
                 for beacon_id in sorted(set(left) & set(right)))


def _sample(index: int, method: str, world_left: World, world_right: World, left: FrameBuffer,
            right: FrameBuffer, rig: CameraRig, context: CaptureContext) -> StereoSample:
    observations = match_observations(project_beacons(world_left, left, rig),
                                      project_beacons(world_right, right, rig))
    vehicle = vehicle_pose_at(world_left, left.in_game_time)
    return StereoSample(
        index=index,
        left=_degrade(left, context, index, LEFT),
        right=_degrade(right, context, index, RIGHT),
        left_depth=_depth(left, context),
        right_depth=_depth(right, context),
        vehicle_pose=vehicle,
        gps=(float(vehicle.translation[0]), float(vehicle.translation[1])),
        timestamp=left.in_game_time,
        method=method,
        observations=observations,
        world_shift_m=world_shift(world_left, world_right),
    )


def run_tefs_cycle(world: World, rig: CameraRig, context: CaptureContext,
                   index: int = 0) -> Tuple[World, CameraRig, StereoSample]:
    """One Temporal-controlled Frame Swap cycle.

    Drive to the preset tick, set timeScale 0, natively pause on the left tick
    to capture left RGB and depth, resume into the pseudo-pause and swap, wait
    for the swap to render, pause on the right tick for the right capture, then
    restore timeScale and swap back.

    Raises:
        ProtocolViolationError: Naming the phase in which the protocol broke
    """
    schedule = context.schedule
    state = CaptureCycleState(world.clock.uni_tick, schedule.cycle_ticks)
    try:
        _check_driving(world, rig)
        world, rig = _ticks(world, rig, context, schedule.preset_tick)
        world = set_time_scale(world, 0.0)
        state.advance(PRESET_PSEUDO_PAUSE)
        world, rig = _ticks(world, rig, context, schedule.left_tick - schedule.preset_tick)
        if rig.active_side != LEFT:
            raise ProtocolViolationError("Left camera is not active", state.phase)

        _render(world, rig, context)
        world = native_pause(world)
        state.advance(PAUSED_LEFT_CAPTURE)
        left = _grab(_render(world, rig, context), world, LEFT, state)
        world_left = world

        world = native_resume(world)
        state.advance(SWAP_WAIT)
        rig = request_camera_swap(rig, RIGHT, world)
        world, rig = _ticks(world, rig, context, schedule.right_tick - schedule.left_tick)
        if rig.active_side != RIGHT:
            raise ProtocolViolationError("Swap to the right camera did not complete", state.phase)

        _render(world, rig, context)
        world = native_pause(world)
        state.advance(PAUSED_RIGHT_CAPTURE)
        right = _grab(_render(world, rig, context), world, RIGHT, state)
        world_right = world

        state.advance(RESTORE)
        world = set_time_scale(world, 1.0)
        world = native_resume(world)
        rig = request_camera_swap(rig, LEFT, world)
        world, rig = _ticks(world, rig, context, schedule.cycle_ticks - schedule.right_tick)
    except ProtocolViolationError as e:
        if e.phase is None:
            raise e.in_phase(state.phase) from e
        raise
    context.stats['cycles'] += 1
    return world, rig, _sample(index, TEFS, world_left, world_right, left, right, rig, context)


def run_naive_swap_cycle(world: World, rig: CameraRig, context: CaptureContext,
                         index: int = 0) -> Tuple[World, CameraRig, StereoSample]:
    """Left on one frame, right on the next, with no time manipulation."""
    schedule = context.schedule
    _check_driving(world, rig)
    world, rig = _ticks(world, rig, context, schedule.left_tick)
    left = _grab(_render(world, rig, context), world, LEFT)
    world_left = world
    rig = request_camera_swap(rig, RIGHT, world)
    world, rig = _ticks(world, rig, context, 1 + schedule.naive_extra_latency_frames)
    right = _grab(_render(world, rig, context), world, RIGHT)
    world_right = world
    rig = request_camera_swap(rig, LEFT, world)
    remaining = schedule.cycle_ticks - schedule.left_tick - 1 - schedule.naive_extra_latency_frames
    world, rig = _ticks(world, rig, context, remaining)
    context.stats['cycles'] += 1
    return world, rig, _sample(index, NAIVE_SWAP, world_left, world_right, left, right, rig, context)


def run_dual_viewport_cycle(world: World, rig: CameraRig, context: CaptureContext,
                            index: int = 0) -> Tuple[World, CameraRig, StereoSample]:
    """Both cameras from one frozen instant, on the same tick schedule as TeFS (no swap)."""
    schedule = context.schedule
    _check_driving(world, rig)
    world, rig = _ticks(world, rig, context, schedule.preset_tick)
    world = set_time_scale(world, 0.0)
    world, rig = _ticks(world, rig, context, schedule.left_tick - schedule.preset_tick)
    left, right = context.renderer.render_stereo_views(world, rig)
    context.stats['renders'] += 2
    world_frozen = world
    world = native_pause(world)
    world = native_resume(world)
    world, rig = _ticks(world, rig, context, schedule.right_tick - schedule.left_tick)
    world = set_time_scale(world, 1.0)
    world, rig = _ticks(world, rig, context, schedule.cycle_ticks - schedule.right_tick)
    context.stats['cycles'] += 1
    return world, rig, _sample(index, DUAL_VIEWPORT, world_frozen, world_frozen, left, right, rig, context)


CYCLE_RUNNERS = {
    TEFS: run_tefs_cycle,
    NAIVE_SWAP: run_naive_swap_cycle,
    DUAL_VIEWPORT: run_dual_viewport_cycle,
}


@dataclass
class SessionSummary:
    """What a capture session produced."""

    directory: str
    method: str
    frame_count: int
    trajectory_length_m: float
    complete: bool
    manifest: DatasetManifest
    stats: Dict[str, int] = field(default_factory=dict)


class CaptureController:
    """Runs one capture session for a scenario and writes it as a dataset."""

    def __init__(self, settings: SettingsModel, method: str, condition: ConditionProfile):
        """Initialize the capture controller.

        Args:
            settings: Effective scenario settings
            method: One of ``tefs``, ``naiveSwap``, ``dualViewport``
            condition: RGB degradation profile
        """
        if method not in METHODS:
            raise ConfigurationError(f"Unknown capture method '{method}', expected one of {METHODS}")
        self.settings = settings
        self.method = method
        self.condition = condition
        capture = settings.section('capture')
        self.world = build_world(settings)
        self.rig = CameraRig.from_settings(settings.section('rig'))
        self.schedule = CaptureSchedule.from_settings(capture)
        self.max_cycles = capture['cycles']
        self.keep_ndc = bool(capture['keep_ndc'])
        self.context = CaptureContext.create(self.rig, self.schedule, condition, settings.seed,
                                             capture['depth_profile'], capture['depth_semantics'])
        self.samples: List[StereoSample] = []

    def _fits(self, world: World) -> bool:
        clock = world.clock
        span = self.schedule.in_game_span(self.method, clock.tick_duration, clock.swap_residual)
        return clock.in_game_time + span <= world.path.duration + TIME_TOLERANCE

    def expected_cycles(self) -> Optional[int]:
        clock = self.world.clock
        spacing = self.schedule.pair_spacing(self.method, clock.tick_duration, clock.swap_residual)
        duration = self.world.path.duration
        estimate = None
        if math.isfinite(duration) and spacing > 0:
            span = self.schedule.in_game_span(self.method, clock.tick_duration, clock.swap_residual)
            estimate = max(int((duration - span + TIME_TOLERANCE) // spacing) + 1, 0)
        if self.max_cycles is not None:
            estimate = self.max_cycles if estimate is None else min(estimate, self.max_cycles)
        return estimate

    def _manifest(self) -> DatasetManifest:
        clock = self.world.clock
        spacing = self.schedule.pair_spacing(self.method, clock.tick_duration, clock.swap_residual)
        day = float(self.settings.section('timebase')['day_duration_s'])
        capture = self.settings.section('capture')
        return DatasetManifest(
            scenario=self.settings.name,
            method=self.method,
            condition=self.condition.name,
            seed=self.settings.seed,
            rig=self.settings.section('rig'),
            config=self.settings.to_dict(),
            depth_semantics=capture['depth_semantics'],
            depth_profile=capture['depth_profile'],
            keep_ndc=self.keep_ndc,
            pair_spacing_s=spacing,
            cam_freq_hz=cam_freq(spacing, day) if spacing > 0 else 0.0,
        )

    def run_session(self, directory: str, progress: bool = False) -> SessionSummary:
        """Capture cycles until the path ends or the cycle cap is reached.

        A session aborted by a library error still gets a manifest, flagged
        ``complete=false``, before the error propagates.
        """
        if self.max_cycles is None and not math.isfinite(self.world.path.duration):
            raise ConfigurationError("A stationary scenario needs capture.cycles or vehicle.duration_s")
        manager = DatasetManager(directory, self._manifest(),
                                 CalibrationRecord.from_rig(self.rig, self.context.depth_semantics))
        manager.start_session()
        runner = CYCLE_RUNNERS[self.method]
        world, rig = self.world, self.rig
        logger.info(f"Capturing '{self.settings.name}' with {self.method} into {directory}")
        index = 0
        with tqdm(total=self.expected_cycles(), disable=not progress, unit='pair', desc=self.method) as bar:
            try:
                while (self.max_cycles is None or index < self.max_cycles) and self._fits(world):
                    world, rig, sample = runner(world, rig, self.context, index)
                    manager.record_sample(sample)
                    logger.debug(f"Cycle {index}: t={sample.timestamp:.6f} s, "
                                 f"{len(sample.observations)} observations, world shift {sample.world_shift_m:.6f} m")
                    index += 1
                    bar.update(1)
            except TefsError:
                manifest = manager.finalize(complete=False)
                logger.error(f"Session aborted after {manifest.frame_count} pairs; partial manifest written")
                raise
        manifest = manager.finalize(complete=True)
        self.world, self.rig = world, rig
        logger.info(f"Captured {manifest.frame_count} pairs, trajectory {manifest.trajectory_length_m:.3f} m")
        return SessionSummary(directory, self.method, manifest.frame_count, manifest.trajectory_length_m,
                              True, manifest, dict(self.context.stats))


def run_session(settings: SettingsModel, method: str, condition: ConditionProfile, directory: str,
                progress: bool = False) -> SessionSummary:
    """Capture a whole scenario with ``method`` into ``directory``."""
    return CaptureController(settings, method, condition).run_session(directory, progress)


def analytic_offsets(settings: SettingsModel) -> Dict[str, float]:
    """Spatial offsets predicted by speed × temporal disparity for each method."""
    speed = float(settings.section('vehicle')['speed_kmh']) / 3.6
    capture = settings.section('capture')
    tefs_dt = float(capture['engine_temporal_disparity_s'])
    naive_dt = float(capture['naive_frame_time_s']) * (1 + int(capture['naive_extra_latency_frames']))
    tefs = spatial_offset(speed, tefs_dt)
    naive = spatial_offset(speed, naive_dt)
    return {
        'speed_mps': speed,
        'tefs_offset_m': tefs,
        'naive_offset_m': naive,
        'dual_offset_m': 0.0,
        'naive_to_tefs_ratio': naive_dt / tefs_dt if tefs_dt > 0 else math.inf,
    }
