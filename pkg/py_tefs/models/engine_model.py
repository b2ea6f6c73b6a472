"""
Engine model for Py-TeFS.

A deterministic single-viewport game-engine simulation. The engine advances in
fixed steps (uniTicks); every step scales scripted motion by the current
timeScale, while hard-coded animations ignore timeScale and freeze only under a
native pause. A timeScale of 0 is the pseudo-pause TeFS relies on.

World values are immutable: every operation returns a new World.
"""

import bisect
import hashlib
import logging
import math
import struct
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Dict, List, Optional, Tuple

import numpy as np

from py_tefs.utils.errors import ConfigurationError, TrajectoryError
from py_tefs.utils.geometry_utils import PoseSE3

logger = logging.getLogger('py-tefs.engine')

TIME_TOLERANCE = 1e-9

STATIC = 'static'
SCRIPTED = 'scripted'
HARD_CODED = 'hardCoded'
MOTION_KINDS = (STATIC, SCRIPTED, HARD_CODED)

BEACON = 'beacon'
BUILDING = 'building'
GROUND = 'ground'
MOVER = 'mover'

# Every channel stays >= 100 so a lightning flash saturates the frame.
SKY_COLOR = (135, 206, 235)
GROUND_COLORS = ((104, 112, 104), (124, 132, 124))
BUILDING_COLORS = ((176, 164, 150), (150, 158, 176), (196, 184, 160))
BEACON_COLORS = ((240, 110, 100), (110, 230, 120), (120, 140, 245), (245, 220, 110), (225, 120, 235))
MOVER_COLOR = (250, 160, 100)

# Corner indices of the two triangles on each box face.
_BOX_FACES = np.array([
    [0, 1, 3], [0, 3, 2],  # -x
    [4, 6, 7], [4, 7, 5],  # +x
    [0, 4, 5], [0, 5, 1],  # -y
    [2, 3, 7], [2, 7, 6],  # +y
    [0, 2, 6], [0, 6, 4],  # -z
    [1, 5, 7], [1, 7, 3],  # +z
])
_BOX_CORNERS = np.array([[x, y, z] for x in (-0.5, 0.5) for y in (-0.5, 0.5) for z in (-0.5, 0.5)])


@dataclass(frozen=True)
class EngineClock:
    """Engine time state.

    ``hard_coded_time`` is the clock hard-coded animations follow; it advances
    ``leak_fraction`` × tick_duration per unpaused tick regardless of timeScale.
    """

    uni_tick: int = 0
    in_game_time: float = 0.0
    time_scale: float = 1.0
    native_paused: bool = False
    tick_duration: float = 1.0 / 60.0
    hard_coded_time: float = 0.0
    swap_residual: float = 0.0


@dataclass(frozen=True)
class PathSegment:
    """Straight (curvature 0) or circular arc (signed curvature, positive turns left)."""

    length: float
    curvature: float = 0.0

    @classmethod
    def from_dict(cls, data: Dict) -> "PathSegment":
        if data['type'] == 'straight':
            return cls(float(data['length']))
        radius = float(data['radius'])
        angle = math.radians(float(data['angle_deg']))
        return cls(radius * abs(angle), math.copysign(1.0 / radius, angle))


@dataclass(frozen=True, eq=False)
class VehiclePath:
    """Scripted ego path: piecewise straights and arcs driven at constant speed."""

    start_xy: Tuple[float, float] = (0.0, 0.0)
    start_z: float = 0.0
    start_heading: float = 0.0
    speed_mps: float = 0.0
    segments: Tuple[PathSegment, ...] = ()
    duration_s: Optional[float] = None

    @cached_property
    def _knots(self) -> List[Tuple[float, float, float, float]]:
        """(distance, x, y, heading) at the start of every segment plus the path end."""
        x, y = self.start_xy
        heading = self.start_heading
        distance = 0.0
        knots = []
        for segment in self.segments:
            knots.append((distance, x, y, heading))
            x, y, heading = _advance(x, y, heading, segment, segment.length)
            distance += segment.length
        knots.append((distance, x, y, heading))
        return knots

    @property
    def total_length(self) -> float:
        return self._knots[-1][0]

    @property
    def duration(self) -> float:
        if self.speed_mps > 0:
            return self.total_length / self.speed_mps
        return math.inf if self.duration_s is None else float(self.duration_s)

    def pose_at_distance(self, distance: float) -> PoseSE3:
        knots = self._knots
        distance = min(max(distance, 0.0), self.total_length)
        index = bisect.bisect_right([k[0] for k in knots[:-1]], distance) - 1
        if index < 0:
            _, x, y, heading = knots[-1]
            return PoseSE3.from_yaw(heading, (x, y, self.start_z))
        start, x, y, heading = knots[index]
        x, y, heading = _advance(x, y, heading, self.segments[index], distance - start)
        return PoseSE3.from_yaw(heading, (x, y, self.start_z))

    def sample_points(self, step: float) -> np.ndarray:
        """(N, 2) ground-plane points along the path every ``step`` meters, end included."""
        total = self.total_length
        count = max(int(math.ceil(total / step)), 1)
        distances = np.linspace(0.0, total, count + 1)
        return np.array([self.pose_at_distance(d).translation[:2] for d in distances])


def _advance(x: float, y: float, heading: float, segment: PathSegment, ds: float):
    if segment.curvature == 0.0:
        return x + ds * math.cos(heading), y + ds * math.sin(heading), heading
    k = segment.curvature
    end_heading = heading + k * ds
    x_end = x + (math.sin(end_heading) - math.sin(heading)) / k
    y_end = y - (math.cos(end_heading) - math.cos(heading)) / k
    return x_end, y_end, end_heading


@dataclass(frozen=True)
class SceneObject:
    """Axis-aligned box (or flat ground quad) with a flat color."""

    object_id: int
    kind: str
    center: Tuple[float, float, float]
    size: Tuple[float, float, float]
    color: Tuple[int, int, int]
    motion: str = STATIC
    velocity: Tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class SceneMesh:
    """Triangle soup of a scene at zero displacement."""

    vertices: np.ndarray      # (M, 3, 3) world meters
    owner: np.ndarray         # (M,) index into Scene.objects
    colors: np.ndarray        # (M, 3) uint8
    object_ids: np.ndarray    # (M,) int32


@dataclass(frozen=True, eq=False)
class Scene:
    objects: Tuple[SceneObject, ...] = ()

    @cached_property
    def mesh(self) -> SceneMesh:
        vertices, owner, colors, ids = [], [], [], []
        for index, obj in enumerate(self.objects):
            tris = _object_triangles(obj)
            vertices.append(tris)
            owner.append(np.full(len(tris), index, dtype=np.int64))
            colors.append(np.tile(np.array(obj.color, dtype=np.uint8), (len(tris), 1)))
            ids.append(np.full(len(tris), obj.object_id, dtype=np.int32))
        if not vertices:
            return SceneMesh(np.zeros((0, 3, 3)), np.zeros(0, dtype=np.int64),
                             np.zeros((0, 3), dtype=np.uint8), np.zeros(0, dtype=np.int32))
        return SceneMesh(np.concatenate(vertices), np.concatenate(owner),
                         np.concatenate(colors), np.concatenate(ids))

    @cached_property
    def _motion(self) -> Tuple[np.ndarray, np.ndarray]:
        velocities = np.array([obj.velocity for obj in self.objects], dtype=np.float64).reshape(-1, 3)
        codes = np.array([MOTION_KINDS.index(obj.motion) for obj in self.objects], dtype=np.int64)
        return velocities, codes

    @property
    def beacons(self) -> List[SceneObject]:
        return [obj for obj in self.objects if obj.kind == BEACON]

    def displacements(self, clock: EngineClock) -> np.ndarray:
        """(n_objects, 3) displacement of every object from its configured center."""
        velocities, codes = self._motion
        elapsed = np.select([codes == 1, codes == 2], [clock.in_game_time, clock.hard_coded_time], 0.0)
        return velocities * elapsed[:, np.newaxis]

    def triangles(self, clock: EngineClock) -> np.ndarray:
        mesh = self.mesh
        if not self.objects:
            return mesh.vertices
        return mesh.vertices + self.displacements(clock)[mesh.owner][:, np.newaxis, :]


def _object_triangles(obj: SceneObject) -> np.ndarray:
    center = np.asarray(obj.center, dtype=np.float64)
    size = np.asarray(obj.size, dtype=np.float64)
    if obj.kind == GROUND:
        hx, hy = size[0] / 2.0, size[1] / 2.0
        quad = center + np.array([[-hx, -hy, 0.0], [hx, -hy, 0.0], [hx, hy, 0.0], [-hx, hy, 0.0]])
        return np.stack([quad[[0, 1, 2]], quad[[0, 2, 3]]])
    corners = center + _BOX_CORNERS * size
    return corners[_BOX_FACES]


@dataclass(frozen=True, eq=False)
class World:
    """Full engine state: clock, scripted vehicle path and scene."""

    clock: EngineClock = field(default_factory=EngineClock)
    path: VehiclePath = field(default_factory=VehiclePath)
    scene: Scene = field(default_factory=Scene)
    rng_seed: int = 0
    leak_fraction: float = 1.0

    def object_position(self, obj: SceneObject) -> np.ndarray:
        index = self.scene.objects.index(obj)
        return np.asarray(obj.center, dtype=np.float64) + self.scene.displacements(self.clock)[index]


def advance_tick(world: World) -> World:
    """Run one engine step.

    uniTick always increments. Unless natively paused, in-game time advances by
    timeScale × tick_duration and the hard-coded animation clock by
    leak_fraction × tick_duration.
    """
    clock = world.clock
    if clock.native_paused:
        return replace(world, clock=replace(clock, uni_tick=clock.uni_tick + 1))
    return replace(world, clock=replace(
        clock,
        uni_tick=clock.uni_tick + 1,
        in_game_time=clock.in_game_time + clock.time_scale * clock.tick_duration,
        hard_coded_time=clock.hard_coded_time + world.leak_fraction * clock.tick_duration,
    ))


def advance_ticks(world: World, count: int) -> World:
    for _ in range(count):
        world = advance_tick(world)
    return world


def set_time_scale(world: World, scale: float) -> World:
    if not scale >= 0:
        raise ConfigurationError(f"timeScale must be >= 0, got {scale}")
    return replace(world, clock=replace(world.clock, time_scale=float(scale)))


def native_pause(world: World) -> World:
    if world.clock.native_paused:
        return world
    return replace(world, clock=replace(world.clock, native_paused=True))


def native_resume(world: World) -> World:
    if not world.clock.native_paused:
        return world
    return replace(world, clock=replace(world.clock, native_paused=False))


def apply_swap_residual(world: World) -> World:
    """Advance in-game time by the engine's swap residual.

    Called when a camera swap completes during a pseudo-paused tick; this is
    where the irreducible temporal disparity between TeFS captures comes from.
    """
    clock = world.clock
    if clock.native_paused or clock.swap_residual == 0.0:
        return world
    return replace(world, clock=replace(clock, in_game_time=clock.in_game_time + clock.swap_residual))


def vehicle_pose_at(world: World, in_game_time: float) -> PoseSE3:
    """Vehicle (body-to-world) pose at ``in_game_time`` seconds.

    Raises:
        TrajectoryError: If the time lies outside the scenario duration
    """
    path = world.path
    if in_game_time < -TIME_TOLERANCE or in_game_time > path.duration + TIME_TOLERANCE:
        raise TrajectoryError(f"Time {in_game_time:.6f} s outside the scenario duration "
                              f"[0, {path.duration:.6f}] s")
    return path.pose_at_distance(path.speed_mps * max(in_game_time, 0.0))


def state_digest(world: World) -> str:
    """SHA-256 of the serialized world state, for determinism checks.

    The uniTick counter is left out: it counts engine steps, and steps taken
    under a native pause change nothing else.
    """
    clock = world.clock
    digest = hashlib.sha256()
    digest.update(struct.pack('<dd?ddd', clock.in_game_time, clock.time_scale, clock.native_paused,
                              clock.tick_duration, clock.hard_coded_time, clock.swap_residual))
    if clock.in_game_time <= world.path.duration + TIME_TOLERANCE:
        digest.update(np.ascontiguousarray(vehicle_pose_at(world, clock.in_game_time).as_matrix()).tobytes())
    digest.update(struct.pack('<qd', world.rng_seed, world.leak_fraction))
    if world.scene.objects:
        digest.update(np.ascontiguousarray(world.scene.displacements(clock)).tobytes())
    return digest.hexdigest()


def world_shift(before: World, after: World) -> float:
    """Largest distance the vehicle or any scene object moved between two states of one world."""
    shifts = [vehicle_pose_at(after, after.clock.in_game_time).distance_to(
        vehicle_pose_at(before, before.clock.in_game_time))]
    if before.scene.objects:
        moved = after.scene.displacements(after.clock) - before.scene.displacements(before.clock)
        shifts.extend(np.linalg.norm(moved, axis=1))
    return float(max(shifts))


def build_path(vehicle: Dict) -> VehiclePath:
    start = vehicle['start']
    return VehiclePath(
        start_xy=(float(start['x']), float(start['y'])),
        start_z=float(start['z']),
        start_heading=math.radians(float(start['heading_deg'])),
        speed_mps=float(vehicle['speed_kmh']) / 3.6,
        segments=tuple(PathSegment.from_dict(s) for s in vehicle['path']),
        duration_s=vehicle.get('duration_s'),
    )


def _clearance(point: np.ndarray, polyline: np.ndarray) -> float:
    """Distance from a ground-plane point to a densely sampled path."""
    if len(polyline) == 0:
        return math.inf
    return float(np.min(np.linalg.norm(polyline - point, axis=1)))


def generate_scene(path: VehiclePath, scene: Dict, seed: int) -> Scene:
    """Place beacons, buildings, movers and ground tiles around ``path``.

    Beacons alternate sides every ``beacon_spacing_m``; buildings stand further
    out. Candidates closer than ``clearance_m`` to the path are re-drawn.
    """
    rng = np.random.default_rng(seed)
    polyline = path.sample_points(0.5)
    clearance = float(scene['clearance_m'])
    beacons: List[SceneObject] = []
    others: List[Tuple] = []

    def place(distance: float, side: float, lateral_range, half_extent: float, attempts: int = 20):
        pose = path.pose_at_distance(distance)
        normal = pose.rotation[:2, 1]
        for _ in range(attempts):
            lateral = rng.uniform(*lateral_range)
            xy = pose.translation[:2] + side * lateral * normal
            if _clearance(xy, polyline) >= clearance + half_extent:
                return xy
        return None

    total = path.total_length
    spacing = float(scene['beacon_spacing_m'])
    if total > 0 and spacing > 0:
        for i, distance in enumerate(np.arange(spacing / 2.0, total, spacing)):
            size = rng.uniform(*scene['beacon_size_m'])
            height = rng.uniform(*scene['beacon_height_m'])
            xy = place(distance, 1.0 if i % 2 == 0 else -1.0, scene['beacon_lateral_m'], size * math.sqrt(2) / 2)
            if xy is None:
                continue
            beacons.append(SceneObject(len(beacons), BEACON, (float(xy[0]), float(xy[1]), path.start_z + height),
                                       (size, size, size), BEACON_COLORS[len(beacons) % len(BEACON_COLORS)]))

    spacing = float(scene['building_spacing_m'])
    if total > 0 and spacing > 0:
        for distance in np.arange(spacing / 2.0, total, spacing):
            for side in (1.0, -1.0):
                footprint = rng.uniform(*scene['building_size_m'])
                height = rng.uniform(*scene['building_height_m'])
                xy = place(distance, side, scene['building_lateral_m'], footprint * math.sqrt(2) / 2)
                if xy is None:
                    continue
                others.append((BUILDING, (float(xy[0]), float(xy[1]), path.start_z + height / 2.0),
                               (footprint, footprint, height),
                               BUILDING_COLORS[len(others) % len(BUILDING_COLORS)], STATIC, (0.0, 0.0, 0.0)))

    for mover in scene['movers']:
        motion = mover.get('motion', STATIC)
        if motion not in MOTION_KINDS:
            raise ConfigurationError(f"Unknown mover motion '{motion}', expected one of {MOTION_KINDS}")
        others.append((MOVER, tuple(float(v) for v in mover['center']), tuple(float(v) for v in mover['size']),
                       tuple(int(v) for v in mover.get('color', MOVER_COLOR)), motion,
                       tuple(float(v) for v in mover.get('velocity', (0.0, 0.0, 0.0)))))

    tile = float(scene['ground_tile_m'])
    if tile > 0 and len(polyline):
        margin = float(scene['ground_margin_m'])
        low = np.floor((polyline.min(axis=0) - margin) / tile).astype(int)
        high = np.ceil((polyline.max(axis=0) + margin) / tile).astype(int)
        for ix in range(low[0], high[0]):
            for iy in range(low[1], high[1]):
                others.append((GROUND, ((ix + 0.5) * tile, (iy + 0.5) * tile, path.start_z), (tile, tile, 0.0),
                               GROUND_COLORS[(ix + iy) % 2], STATIC, (0.0, 0.0, 0.0)))

    objects = list(beacons)
    for kind, center, size, color, motion, velocity in others:
        objects.append(SceneObject(len(objects), kind, center, size, color, motion, velocity))
    logger.debug(f"Generated scene: {len(beacons)} beacons, {len(objects)} objects")
    return Scene(tuple(objects))


def build_world(settings) -> World:
    """Create the initial World of a scenario.

    Args:
        settings: SettingsModel holding the effective configuration

    Returns:
        World: Clock at uniTick 0, timeScale 1, not paused
    """
    engine = settings.section('engine')
    capture = settings.section('capture')
    path = build_path(settings.section('vehicle'))
    clock = EngineClock(tick_duration=float(engine['tick_duration_s']),
                        swap_residual=float(capture['engine_temporal_disparity_s']))
    scene = generate_scene(path, settings.section('scene'), settings.seed)
    return World(clock=clock, path=path, scene=scene, rng_seed=settings.seed,
                 leak_fraction=float(engine['leak_fraction']))
