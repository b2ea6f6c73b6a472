"""
Ground-truth depth conversion for Py-TeFS.

The renderer stores depth in normalized device coordinates (NDC). This module
turns NDC rasters into metric depth and back, using the per-pixel near-plane
distance map (Map_uv) to move between planar depth and ray distance.

Three conversion profiles are provided:

- ``simNative``: exact inverse of the renderer's projection
  ``ndc = fc·(z − nc) / (z·(fc − nc))``; this is the ground-truth path.
- ``draftEq2``: ``depth = map / (1 − ndc·nc/(2·fc))``.
- ``cameraReadyInline``: ``depth = map / (ndc + map·nc/(2·fc))``.

The two published formulas do not invert a standard projection over the full
clip range, so each carries an explicit valid NDC range; pixels outside it are
flagged and written as ``FAR_SENTINEL``.
"""

import math
from dataclasses import dataclass

import numpy as np

from py_tefs.utils.errors import ConfigurationError, DepthRangeError

FAR_SENTINEL = float("inf")
# ndc written where no geometry was drawn; 1.0 is the far plane itself
NDC_CLEAR_VALUE = math.inf

SIM_NATIVE = "simNative"
DRAFT_EQ2 = "draftEq2"
CAMERA_READY_INLINE = "cameraReadyInline"
PROFILE_KINDS = (SIM_NATIVE, DRAFT_EQ2, CAMERA_READY_INLINE)

RAY = "ray"
PLANAR = "planar"
SEMANTICS = (RAY, PLANAR)


@dataclass(frozen=True)
class DepthConversionProfile:
    """Conversion formula plus the clip distances it is evaluated with."""

    kind: str = SIM_NATIVE
    near: float = 0.01
    far: float = 600.0

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS:
            raise ConfigurationError(f"Unknown depth profile '{self.kind}', expected one of {PROFILE_KINDS}")
        if not 0 < self.near < self.far:
            raise ConfigurationError(f"Clip planes must satisfy 0 < near < far, got {self.near}, {self.far}")

    @property
    def half_ratio(self) -> float:
        """The nc/(2·fc) factor shared by both published formulas."""
        return self.near / (2.0 * self.far)


def map_uv_at(near: float, fx: float, fy: float, cx: float, cy: float, u, v):
    """Distance from the camera center to the near-plane point seen at pixel coordinate (u, v)."""
    x = (np.asarray(u, dtype=np.float64) - cx) / fx
    y = (np.asarray(v, dtype=np.float64) - cy) / fy
    return near * np.sqrt(1.0 + x * x + y * y)


def compute_map_uv(rig) -> np.ndarray:
    """Per-pixel near-plane distance grid for ``rig``, evaluated at pixel centers.

    Args:
        rig: CameraRig providing image size, field of view and near clip

    Returns:
        np.ndarray: (height, width) grid in meters

    Raises:
        ConfigurationError: If either field of view is not inside (0°, 180°)
    """
    for name, fov in (("hfov", rig.hfov_deg), ("vfov", rig.vfov_deg)):
        if not 0.0 < fov < 180.0:
            raise ConfigurationError(f"Degenerate {name} {fov}°, expected 0° < fov < 180°")
    width, height = rig.image_size
    fx, fy, cx, cy = rig.intrinsics()
    u = np.arange(width, dtype=np.float64) + 0.5
    v = np.arange(height, dtype=np.float64) + 0.5
    return map_uv_at(rig.near_clip_m, fx, fy, cx, cy, u[np.newaxis, :], v[:, np.newaxis])


def planar_to_ndc(planar: np.ndarray, near: float, far: float) -> np.ndarray:
    """The renderer's forward projection of planar depth into NDC."""
    planar = np.asarray(planar, dtype=np.float64)
    return far * (planar - near) / (planar * (far - near))


def ndc_to_planar(ndc: np.ndarray, near: float, far: float) -> np.ndarray:
    """Exact inverse of :func:`planar_to_ndc`."""
    ndc = np.asarray(ndc, dtype=np.float64)
    return (far * near) / (far - ndc * (far - near))


def ndc_valid_mask(ndc: np.ndarray, map_uv: np.ndarray, profile: DepthConversionProfile) -> np.ndarray:
    """Boolean mask of NDC values the profile can convert."""
    ndc = np.asarray(ndc, dtype=np.float64)
    finite = np.isfinite(ndc)
    if profile.kind == SIM_NATIVE:
        return finite & (ndc >= 0.0) & (ndc <= 1.0)
    if profile.kind == DRAFT_EQ2:
        return finite & (ndc >= 0.0) & (ndc <= 1.0)
    map_uv = np.broadcast_to(np.asarray(map_uv, dtype=np.float64), ndc.shape)
    lowest = map_uv / profile.far - map_uv * profile.half_ratio
    return finite & (ndc >= lowest) & (ndc > 0.0) & (ndc <= 1.0)


def ndc_to_depth(ndc_grid: np.ndarray, map_uv: np.ndarray, profile: DepthConversionProfile,
                 semantics: str = RAY) -> np.ndarray:
    """Convert an NDC raster into metric depth.

    Args:
        ndc_grid: NDC values, any shape broadcastable with ``map_uv``
        map_uv: Near-plane distance grid from :func:`compute_map_uv`
        profile: Conversion profile
        semantics: ``ray`` for euclidean distance, ``planar`` for camera z

    Returns:
        np.ndarray: Depth in meters; invalid pixels hold ``FAR_SENTINEL``
    """
    if semantics not in SEMANTICS:
        raise ConfigurationError(f"Unknown depth semantics '{semantics}'")
    ndc = np.asarray(ndc_grid, dtype=np.float64)
    map_uv = np.broadcast_to(np.asarray(map_uv, dtype=np.float64), ndc.shape)
    valid = ndc_valid_mask(ndc, map_uv, profile)

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if profile.kind == SIM_NATIVE:
            planar = (profile.far * profile.near) / (profile.far - ndc * (profile.far - profile.near))
            depth = planar * (map_uv / profile.near) if semantics == RAY else planar
        else:
            if profile.kind == DRAFT_EQ2:
                ray = map_uv / (1.0 - ndc * profile.half_ratio)
            else:
                ray = map_uv / (ndc + map_uv * profile.half_ratio)
            depth = ray if semantics == RAY else ray * (profile.near / map_uv)
    return np.where(valid, depth, FAR_SENTINEL)


def ndc_to_depth_scalar(ndc: float, map_uv: float, profile: DepthConversionProfile,
                        semantics: str = RAY) -> float:
    """Per-pixel reference of :func:`ndc_to_depth`, same operation order."""
    valid = bool(ndc_valid_mask(np.float64(ndc), np.float64(map_uv), profile))
    if not valid:
        return FAR_SENTINEL
    if profile.kind == SIM_NATIVE:
        planar = (profile.far * profile.near) / (profile.far - ndc * (profile.far - profile.near))
        return planar * (map_uv / profile.near) if semantics == RAY else planar
    if profile.kind == DRAFT_EQ2:
        ray = map_uv / (1.0 - ndc * profile.half_ratio)
    else:
        ray = map_uv / (ndc + map_uv * profile.half_ratio)
    return ray if semantics == RAY else ray * (profile.near / map_uv)


def depth_range(map_uv: np.ndarray, profile: DepthConversionProfile, semantics: str = RAY):
    """Lowest and highest depth each pixel's profile can encode."""
    map_uv = np.asarray(map_uv, dtype=np.float64)
    ray_factor = map_uv / profile.near
    if profile.kind == SIM_NATIVE:
        low, high = profile.near * ray_factor, profile.far * ray_factor
    elif profile.kind == DRAFT_EQ2:
        low, high = map_uv, map_uv / (1.0 - profile.half_ratio)
    else:
        low, high = map_uv / (1.0 + map_uv * profile.half_ratio), np.full_like(map_uv, profile.far)
    if semantics == PLANAR:
        return low / ray_factor, high / ray_factor
    return low, high


def depth_to_ndc(depth_grid: np.ndarray, map_uv: np.ndarray, profile: DepthConversionProfile,
                 semantics: str = RAY) -> np.ndarray:
    """Forward mapping from metric depth to NDC.

    Raises:
        DepthRangeError: If any depth lies outside the profile's encodable range
    """
    if semantics not in SEMANTICS:
        raise ConfigurationError(f"Unknown depth semantics '{semantics}'")
    depth = np.asarray(depth_grid, dtype=np.float64)
    map_uv = np.broadcast_to(np.asarray(map_uv, dtype=np.float64), depth.shape)
    low, high = depth_range(map_uv, profile, semantics)
    # relative slack absorbs the rounding of ray/planar rescaling
    slack = 1e-12
    outside = ~np.isfinite(depth) | (depth < low * (1.0 - slack)) | (depth > high * (1.0 + slack))
    if np.any(outside):
        worst = depth[outside].flat[0]
        raise DepthRangeError(f"Depth {worst} outside the {profile.kind} range")

    ray = depth if semantics == RAY else depth * (map_uv / profile.near)
    if profile.kind == SIM_NATIVE:
        planar = ray * (profile.near / map_uv)
        ndc = profile.far * (planar - profile.near) / (planar * (profile.far - profile.near))
        return np.clip(ndc, 0.0, 1.0)
    if profile.kind == DRAFT_EQ2:
        return np.clip((1.0 - map_uv / ray) / profile.half_ratio, 0.0, 1.0)
    return np.clip(map_uv / ray - map_uv * profile.half_ratio, 0.0, 1.0)


def focal_from_fov(size_px: int, fov_deg: float) -> float:
    """Focal length in pixels spanning ``size_px`` over ``fov_deg``."""
    return (size_px / 2.0) / math.tan(math.radians(fov_deg) / 2.0)
