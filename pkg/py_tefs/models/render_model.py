"""
Render model for Py-TeFS.

A deterministic pinhole z-buffer rasterizer for the single active camera of a
stereo rig. It reproduces the two engine constraints the TeFS protocol works
around: a camera swap takes effect only after the next non-paused render tick,
and a natively paused engine does not render (it keeps presenting its last
frame). Weather and lighting degradations are applied to RGB only.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from py_tefs.models.engine_model import SKY_COLOR, World, vehicle_pose_at
from py_tefs.utils.depth_utils import NDC_CLEAR_VALUE, focal_from_fov, planar_to_ndc
from py_tefs.utils.errors import ConfigurationError, SwapRejectedError
from py_tefs.utils.geometry_utils import VEHICLE_FROM_CAMERA, PoseSE3

logger = logging.getLogger('py-tefs.render')

LEFT = 'left'
RIGHT = 'right'
SIDES = (LEFT, RIGHT)
BACKGROUND_ID = -1


@dataclass(frozen=True)
class CameraRig:
    """Parallel rectified stereo rig; the left camera is the rig origin."""

    baseline_m: float = 0.54
    hfov_deg: float = 90.0
    vfov_deg: float = 59.0
    near_clip_m: float = 0.01
    far_clip_m: float = 600.0
    image_size: Tuple[int, int] = (320, 180)
    active_side: str = LEFT
    pending_swap: Optional[str] = None
    mount: PoseSE3 = field(default_factory=lambda: PoseSE3(VEHICLE_FROM_CAMERA, (1.5, 0.0, 1.4)))

    def __post_init__(self):
        if not self.baseline_m > 0:
            raise ConfigurationError(f"Baseline must be positive, got {self.baseline_m}")
        if not 0 < self.near_clip_m < self.far_clip_m:
            raise ConfigurationError("Clip planes must satisfy 0 < near < far")
        if self.active_side not in SIDES:
            raise ConfigurationError(f"Unknown camera side '{self.active_side}'")
        object.__setattr__(self, 'image_size', (int(self.image_size[0]), int(self.image_size[1])))

    def intrinsics(self) -> Tuple[float, float, float, float]:
        """(fx, fy, cx, cy) in pixels; the principal point is the image center."""
        width, height = self.image_size
        return (focal_from_fov(width, self.hfov_deg), focal_from_fov(height, self.vfov_deg),
                width / 2.0, height / 2.0)

    def camera_matrix(self) -> np.ndarray:
        fx, fy, cx, cy = self.intrinsics()
        return np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])

    def side_offset(self, side: str) -> PoseSE3:
        shift = self.baseline_m if side == RIGHT else 0.0
        return PoseSE3(np.eye(3), (shift, 0.0, 0.0))

    def camera_pose(self, vehicle_pose: PoseSE3, side: Optional[str] = None) -> PoseSE3:
        """Camera-to-world pose: vehicle ∘ mount ∘ side offset."""
        return vehicle_pose @ self.mount @ self.side_offset(side or self.active_side)

    @classmethod
    def from_settings(cls, rig: dict) -> "CameraRig":
        mount = rig['mount']
        return cls(baseline_m=float(rig['baseline_m']), hfov_deg=float(rig['hfov_deg']),
                   vfov_deg=float(rig['vfov_deg']), near_clip_m=float(rig['near_clip_m']),
                   far_clip_m=float(rig['far_clip_m']), image_size=tuple(rig['image_size']),
                   mount=PoseSE3(VEHICLE_FROM_CAMERA, (mount['x'], mount['y'], mount['z'])))


@dataclass(frozen=True, eq=False)
class FrameBuffer:
    """One rendered view."""

    rgb: np.ndarray          # (H, W, 3) uint8
    ndc: np.ndarray          # (H, W) float64 in [0, 1]
    object_ids: np.ndarray   # (H, W) int32, BACKGROUND_ID where nothing was drawn
    uni_tick: int
    in_game_time: float
    camera_pose: PoseSE3
    side: str
    stale: bool = False


@dataclass(frozen=True)
class ConditionProfile:
    """Weather and lighting degradation applied to RGB rasters."""

    name: str = 'extraSunny'
    gaussian_noise_sigma: float = 0.0
    gamma_darken: float = 1.0
    flash_probability: float = 0.0
    flash_gain: float = 1.0

    @property
    def is_identity(self) -> bool:
        return (self.gaussian_noise_sigma == 0.0 and self.gamma_darken == 1.0
                and self.flash_probability == 0.0)


CONDITION_PROFILES = {
    'extraSunny': ConditionProfile('extraSunny'),
    'cloudyRain': ConditionProfile('cloudyRain', gaussian_noise_sigma=8.0, gamma_darken=1.3),
    'nightThunderstorm': ConditionProfile('nightThunderstorm', gaussian_noise_sigma=12.0, gamma_darken=2.2,
                                          flash_probability=0.05, flash_gain=4.0),
}

# Command-line aliases.
CONDITION_ALIASES = {'sunny': 'extraSunny', 'rain': 'cloudyRain', 'storm': 'nightThunderstorm'}


def get_condition(name: str) -> ConditionProfile:
    key = CONDITION_ALIASES.get(name, name)
    if key not in CONDITION_PROFILES:
        raise ConfigurationError(f"Unknown condition profile '{name}'")
    return CONDITION_PROFILES[key]


def request_camera_swap(rig: CameraRig, side: str, world: World) -> CameraRig:
    """Latch a swap to ``side``; it takes effect after the next render tick.

    Raises:
        SwapRejectedError: If the engine is natively paused
    """
    if side not in SIDES:
        raise ConfigurationError(f"Unknown camera side '{side}'")
    if world.clock.native_paused:
        raise SwapRejectedError(f"Cannot swap to the {side} camera while natively paused")
    if side == rig.active_side:
        return replace(rig, pending_swap=None)
    return replace(rig, pending_swap=side)


def complete_render_tick(rig: CameraRig, world: World) -> Tuple[CameraRig, bool]:
    """Finish one render tick, committing a latched swap if the engine is running.

    Returns:
        Tuple[CameraRig, bool]: The updated rig and whether a swap was committed
    """
    if rig.pending_swap is None or world.clock.native_paused:
        return rig, False
    return replace(rig, active_side=rig.pending_swap, pending_swap=None), True


def _clip_near(polygon: np.ndarray, near: float) -> np.ndarray:
    """Sutherland-Hodgman clip of a camera-space polygon against z >= near."""
    out = []
    count = len(polygon)
    for i in range(count):
        current, following = polygon[i], polygon[(i + 1) % count]
        current_in, following_in = current[2] >= near, following[2] >= near
        if current_in:
            out.append(current)
        if current_in != following_in:
            t = (near - current[2]) / (following[2] - current[2])
            point = current + t * (following - current)
            point[2] = near
            out.append(point)
    return np.array(out)


class RenderModel:
    """Rasterizer holding the scratch buffers and the last committed frame."""

    def __init__(self):
        self.last_frame: Optional[FrameBuffer] = None
        self.frames_rendered = 0

    def _blank(self, rig: CameraRig):
        width, height = rig.image_size
        rgb = np.empty((height, width, 3), dtype=np.uint8)
        rgb[:] = SKY_COLOR
        ndc = np.full((height, width), NDC_CLEAR_VALUE, dtype=np.float64)
        ids = np.full((height, width), BACKGROUND_ID, dtype=np.int32)
        return rgb, ndc, ids

    def render_view(self, world: World, rig: CameraRig, side: Optional[str] = None) -> FrameBuffer:
        """Render the active camera (or ``side``) of ``rig`` at the world's current instant.

        While natively paused the engine does not render: the last committed
        frame is returned flagged ``stale``.
        """
        clock = world.clock
        if clock.native_paused:
            if self.last_frame is None:
                rgb, ndc, ids = self._blank(rig)
                return FrameBuffer(rgb, ndc, ids, clock.uni_tick, clock.in_game_time,
                                   PoseSE3.identity(), side or rig.active_side, stale=True)
            return replace(self.last_frame, stale=True)
        frame = self.rasterize(world, rig, side or rig.active_side)
        self.last_frame = frame
        return frame

    def render_stereo_views(self, world: World, rig: CameraRig) -> Tuple[FrameBuffer, FrameBuffer]:
        """Dual-viewport rendering of both cameras from the same world instant."""
        left = self.rasterize(world, rig, LEFT)
        right = self.rasterize(world, rig, RIGHT)
        self.last_frame = right
        return left, right

    def rasterize(self, world: World, rig: CameraRig, side: str) -> FrameBuffer:
        clock = world.clock
        pose = rig.camera_pose(vehicle_pose_at(world, clock.in_game_time), side)
        rgb, ndc, ids = self._blank(rig)
        mesh = world.scene.mesh
        if len(mesh.vertices):
            triangles = pose.inverse_transform_points(world.scene.triangles(clock).reshape(-1, 3)).reshape(-1, 3, 3)
            self._draw(triangles, mesh.colors, mesh.object_ids, rig, rgb, ndc, ids)
        self.frames_rendered += 1
        return FrameBuffer(rgb, ndc, ids, clock.uni_tick, clock.in_game_time, pose, side)

    def _draw(self, triangles: np.ndarray, colors: np.ndarray, object_ids: np.ndarray,
              rig: CameraRig, rgb: np.ndarray, ndc: np.ndarray, ids: np.ndarray) -> None:
        width, height = rig.image_size
        fx, fy, cx, cy = rig.intrinsics()
        near, far = rig.near_clip_m, rig.far_clip_m
        tan_x = math.tan(math.radians(rig.hfov_deg) / 2.0)
        tan_y = math.tan(math.radians(rig.vfov_deg) / 2.0)

        x, y, z = triangles[..., 0], triangles[..., 1], triangles[..., 2]
        outside = (np.all(z < near, axis=1) | np.all(z > far, axis=1)
                   | np.all(x > z * tan_x, axis=1) | np.all(x < -z * tan_x, axis=1)
                   | np.all(y > z * tan_y, axis=1) | np.all(y < -z * tan_y, axis=1))

        for index in np.flatnonzero(~outside):
            polygon = triangles[index]
            if np.any(polygon[:, 2] < near):
                polygon = _clip_near(polygon, near)
                if len(polygon) < 3:
                    continue
            screen = np.column_stack((fx * polygon[:, 0] / polygon[:, 2] + cx,
                                      fy * polygon[:, 1] / polygon[:, 2] + cy,
                                      polygon[:, 2]))
            for fan in range(1, len(screen) - 1):
                self._fill(screen[[0, fan, fan + 1]], colors[index], object_ids[index],
                           width, height, near, far, rgb, ndc, ids)

    @staticmethod
    def _fill(tri: np.ndarray, color: np.ndarray, object_id: int, width: int, height: int,
              near: float, far: float, rgb: np.ndarray, ndc: np.ndarray, ids: np.ndarray) -> None:
        """Scan-convert one screen-space triangle, sampling at pixel centers."""
        (u0, v0, z0), (u1, v1, z1), (u2, v2, z2) = tri
        area = (u1 - u0) * (v2 - v0) - (u2 - u0) * (v1 - v0)
        if abs(area) < 1e-12:
            return
        i_min = max(int(math.ceil(min(u0, u1, u2) - 0.5)), 0)
        i_max = min(int(math.floor(max(u0, u1, u2) - 0.5)), width - 1)
        j_min = max(int(math.ceil(min(v0, v1, v2) - 0.5)), 0)
        j_max = min(int(math.floor(max(v0, v1, v2) - 0.5)), height - 1)
        if i_min > i_max or j_min > j_max:
            return

        pu = np.arange(i_min, i_max + 1, dtype=np.float64)[np.newaxis, :] + 0.5
        pv = np.arange(j_min, j_max + 1, dtype=np.float64)[:, np.newaxis] + 0.5
        w0 = ((u1 - pu) * (v2 - pv) - (u2 - pu) * (v1 - pv)) / area
        w1 = ((u2 - pu) * (v0 - pv) - (u0 - pu) * (v2 - pv)) / area
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0.0) & (w1 >= 0.0) & (w2 >= 0.0)
        if not inside.any():
            return

        inverse_depth = w0 / z0 + w1 / z1 + w2 / z2
        with np.errstate(divide='ignore', invalid='ignore'):
            # near-plane clipping can leave z a rounding step below near
            fragment = np.maximum(planar_to_ndc(1.0 / inverse_depth, near, far), 0.0)
        window = ndc[j_min:j_max + 1, i_min:i_max + 1]
        closer = inside & (fragment <= 1.0) & (fragment < window)
        if not closer.any():
            return
        window[closer] = fragment[closer]
        rgb[j_min:j_max + 1, i_min:i_max + 1][closer] = color
        ids[j_min:j_max + 1, i_min:i_max + 1][closer] = object_id


def apply_condition(frame: FrameBuffer, profile: ConditionProfile, rng: np.random.Generator) -> FrameBuffer:
    """Degrade the RGB raster of ``frame``; depth, ids and pose stay untouched.

    A flash frame is lit by the lightning: the night darkening is skipped and the
    noisy raster is multiplied by ``flash_gain`` before clipping.
    """
    if profile.is_identity:
        return frame
    flash = profile.flash_probability > 0.0 and rng.random() < profile.flash_probability
    values = frame.rgb.astype(np.float64)
    if not flash and profile.gamma_darken != 1.0:
        values = np.power(values / 255.0, profile.gamma_darken) * 255.0
    if profile.gaussian_noise_sigma > 0.0:
        values = values + rng.normal(0.0, profile.gaussian_noise_sigma, size=values.shape)
    if flash:
        values = values * profile.flash_gain
    rgb = np.clip(np.rint(values), 0, 255).astype(np.uint8)
    return replace(frame, rgb=rgb)


def force_flash(profile: ConditionProfile) -> ConditionProfile:
    """Copy of ``profile`` that flashes on every frame."""
    return replace(profile, flash_probability=1.0)
