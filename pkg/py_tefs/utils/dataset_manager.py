"""
Dataset manager for Py-TeFS.

This module owns the on-disk dataset layout: manifest, calibration, stereo
images, depth rasters, feature sidecars and the pose, GPS and timestamp text
files. Writers are deterministic (identical sessions give byte-identical
trees) and readers reject anything the writer could not have produced.
"""

import json
import logging
import os
import struct
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from py_tefs.models.analysis_model import Trajectory
from py_tefs.models.render_model import CameraRig, FrameBuffer
from py_tefs.models.sample_model import FeatureObservation, StereoSample
from py_tefs.utils.depth_utils import DepthConversionProfile, compute_map_uv, ndc_to_depth
from py_tefs.utils.errors import DatasetFormatError
from py_tefs.utils.geometry_utils import VEHICLE_FROM_CAMERA, PoseSE3, is_rotation

logger = logging.getLogger('py-tefs.dataset')

DATASET_VERSION = 1
MANIFEST_FILE = 'manifest.json'
CALIB_FILE = 'calib.txt'
POSES_FILE = 'poses.txt'
POSES_RIGHT_FILE = 'poses_right.txt'
GPS_FILE = 'gps.txt'
TIMES_FILE = 'times.txt'
STAMPS_FILE = 'stamps.txt'
FEATURES_DIR = 'features'

DEPTH_MAGIC = b'TDEP'
DEPTH_HEADER = struct.Struct('<4sIII')
SEMANTICS_CODES = {'ray': 0, 'planar': 1, 'ndc': 2}
READ_ORTHONORMAL_TOLERANCE = 1e-6
POSE_FORMAT = '%.12e'


@dataclass
class DatasetManifest:
    """Dataset-level metadata written as ``manifest.json``."""

    scenario: str
    method: str
    condition: str
    seed: int
    rig: Dict[str, Any]
    config: Dict[str, Any]
    depth_semantics: str = 'ray'
    depth_profile: str = 'simNative'
    keep_ndc: bool = False
    pair_spacing_s: float = 0.0
    cam_freq_hz: float = 0.0
    frame_count: int = 0
    trajectory_length_m: float = 0.0
    complete: bool = False
    frames: List[Dict[str, Any]] = field(default_factory=list)
    version: int = DATASET_VERSION

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + '\n'

    @classmethod
    def from_dict(cls, data: Dict[str, Any], path: Optional[str] = None) -> "DatasetManifest":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        missing = names - set(data)
        if unknown or missing:
            raise DatasetFormatError(f"Manifest keys mismatch (unknown {sorted(unknown)}, missing {sorted(missing)})",
                                     path=path)
        if data['version'] != DATASET_VERSION:
            raise DatasetFormatError(f"Unsupported dataset version {data['version']}", path=path)
        return cls(**data)


@dataclass(frozen=True)
class CalibrationRecord:
    """Intrinsics shared by both rectified cameras plus stereo and clip parameters."""

    camera_matrix: np.ndarray
    baseline_m: float
    image_size: Tuple[int, int]
    near_clip_m: float
    far_clip_m: float
    depth_semantics: str = 'ray'

    def __post_init__(self):
        k = np.asarray(self.camera_matrix, dtype=np.float64)
        fx, fy, cx, cy = k[0, 0], k[1, 1], k[0, 2], k[1, 2]
        width, height = self.image_size
        if not (fx > 0 and fy > 0):
            raise DatasetFormatError(f"Focal lengths must be positive, got {fx}, {fy}")
        if not (0 <= cx <= width and 0 <= cy <= height):
            raise DatasetFormatError(f"Principal point ({cx}, {cy}) outside the {width}x{height} image")
        object.__setattr__(self, 'camera_matrix', k)

    @property
    def fx(self) -> float:
        return float(self.camera_matrix[0, 0])

    @property
    def fy(self) -> float:
        return float(self.camera_matrix[1, 1])

    @property
    def cx(self) -> float:
        return float(self.camera_matrix[0, 2])

    @property
    def cy(self) -> float:
        return float(self.camera_matrix[1, 2])

    @classmethod
    def from_rig(cls, rig, depth_semantics: str = 'ray') -> "CalibrationRecord":
        return cls(rig.camera_matrix(), rig.baseline_m, tuple(rig.image_size), rig.near_clip_m,
                   rig.far_clip_m, depth_semantics)


def _frame_name(index: int, extension: str) -> str:
    return f"{index:06d}.{extension}"


def write_ppm(path: str, rgb: np.ndarray) -> None:
    """Binary PPM (P6), 8 bits per channel."""
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    height, width = rgb.shape[:2]
    with open(path, 'wb') as f:
        f.write(f"P6\n{width} {height}\n255\n".encode('ascii'))
        f.write(rgb.tobytes())


def read_ppm(path: str) -> np.ndarray:
    with open(path, 'rb') as f:
        data = f.read()
    parts = data.split(b'\n', 3)
    if len(parts) != 4 or parts[0] != b'P6' or parts[2] != b'255':
        raise DatasetFormatError("Not a binary 8-bit PPM written by py-tefs", path=path)
    try:
        width, height = (int(v) for v in parts[1].split())
    except ValueError as e:
        raise DatasetFormatError("Malformed PPM size line", path=path) from e
    if len(parts[3]) != width * height * 3:
        raise DatasetFormatError(f"PPM payload has {len(parts[3])} bytes, expected {width * height * 3}", path=path)
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(height, width, 3).copy()


def write_depth(path: str, grid: np.ndarray, semantics: str) -> None:
    """Depth raster: 16-byte header then row-major little-endian floats.

    Metric rasters are float32; raw NDC rasters are float64 so offline
    conversion keeps the depth-buffer precision.
    """
    if semantics not in SEMANTICS_CODES:
        raise DatasetFormatError(f"Unknown depth semantics '{semantics}'", path=path)
    dtype = '<f8' if semantics == 'ndc' else '<f4'
    height, width = grid.shape
    with open(path, 'wb') as f:
        f.write(DEPTH_HEADER.pack(DEPTH_MAGIC, width, height, SEMANTICS_CODES[semantics]))
        f.write(np.ascontiguousarray(grid, dtype=dtype).tobytes())


def read_depth(path: str) -> Tuple[np.ndarray, str]:
    """Read a depth raster; returns (float64 grid, semantics)."""
    with open(path, 'rb') as f:
        data = f.read()
    if len(data) < DEPTH_HEADER.size:
        raise DatasetFormatError("Truncated depth header", path=path)
    magic, width, height, code = DEPTH_HEADER.unpack_from(data)
    names = {v: k for k, v in SEMANTICS_CODES.items()}
    if magic != DEPTH_MAGIC or code not in names:
        raise DatasetFormatError("Bad depth header", path=path)
    semantics = names[code]
    itemsize = 8 if semantics == 'ndc' else 4
    if len(data) != DEPTH_HEADER.size + itemsize * width * height:
        raise DatasetFormatError("Depth payload size does not match its header", path=path)
    dtype = '<f8' if semantics == 'ndc' else '<f4'
    grid = np.frombuffer(data, dtype=dtype, offset=DEPTH_HEADER.size).reshape(height, width)
    return grid.astype(np.float64), semantics


def format_pose_row(pose: PoseSE3) -> str:
    return ' '.join(POSE_FORMAT % v for v in pose.as_matrix()[:3, :].reshape(-1))


def write_features(path: str, observations) -> None:
    with open(path, 'w') as f:
        for obs in observations:
            f.write('%d %.17g %.17g %.17g %.17g\n' % (obs.beacon_id, obs.left[0], obs.left[1],
                                                      obs.right[0], obs.right[1]))


def read_features(path: str) -> List[FeatureObservation]:
    observations = []
    with open(path, 'r') as f:
        for number, line in enumerate(f, start=1):
            parts = line.split()
            if len(parts) != 5:
                raise DatasetFormatError(f"Expected 5 columns, got {len(parts)}", path=path, line=number)
            try:
                beacon_id = int(parts[0])
                uL, vL, uR, vR = (float(v) for v in parts[1:])
            except ValueError as e:
                raise DatasetFormatError(f"Malformed feature row: {e}", path=path, line=number) from e
            observations.append(FeatureObservation(beacon_id, (uL, vL), (uR, vR)))
    return observations


def write_calibration(directory: str, calib: CalibrationRecord) -> None:
    """KITTI-style projection rows plus the rig parameters."""
    k = calib.camera_matrix
    p0 = np.hstack((k, np.zeros((3, 1))))
    p1 = p0.copy()
    p1[0, 3] = -calib.fx * calib.baseline_m
    with open(os.path.join(directory, CALIB_FILE), 'w') as f:
        f.write('P0: ' + ' '.join(POSE_FORMAT % v for v in p0.reshape(-1)) + '\n')
        f.write('P1: ' + ' '.join(POSE_FORMAT % v for v in p1.reshape(-1)) + '\n')
        f.write(f'baseline: {POSE_FORMAT % calib.baseline_m}\n')
        f.write(f'image_size: {calib.image_size[0]} {calib.image_size[1]}\n')
        f.write(f'clips: {POSE_FORMAT % calib.near_clip_m} {POSE_FORMAT % calib.far_clip_m}\n')
        f.write(f'depth_semantics: {calib.depth_semantics}\n')


def read_calibration(directory: str) -> CalibrationRecord:
    path = os.path.join(directory, CALIB_FILE)
    entries: Dict[str, List[str]] = {}
    with open(path, 'r') as f:
        for number, line in enumerate(f, start=1):
            key, sep, value = line.partition(':')
            if not sep or key in entries:
                raise DatasetFormatError(f"Malformed calibration line '{line.strip()}'", path=path, line=number)
            entries[key] = value.split()
    expected = {'P0': 12, 'P1': 12, 'baseline': 1, 'image_size': 2, 'clips': 2, 'depth_semantics': 1}
    for key, count in expected.items():
        if len(entries.get(key, ())) != count:
            raise DatasetFormatError(f"Calibration entry '{key}' missing or malformed", path=path)
    try:
        p0 = np.array([float(v) for v in entries['P0']]).reshape(3, 4)
        p1 = np.array([float(v) for v in entries['P1']]).reshape(3, 4)
        baseline = float(entries['baseline'][0])
        size = (int(entries['image_size'][0]), int(entries['image_size'][1]))
        near, far = (float(v) for v in entries['clips'])
    except ValueError as e:
        raise DatasetFormatError(f"Malformed calibration value: {e}", path=path) from e
    if not np.array_equal(p0[:, :3], p1[:, :3]):
        raise DatasetFormatError("Left and right intrinsics differ", path=path)
    return CalibrationRecord(p0[:, :3], baseline, size, near, far, entries['depth_semantics'][0])


def write_manifest(directory: str, manifest: DatasetManifest) -> None:
    with open(os.path.join(directory, MANIFEST_FILE), 'w') as f:
        f.write(manifest.to_json())


def read_manifest(directory: str) -> DatasetManifest:
    path = os.path.join(directory, MANIFEST_FILE)
    try:
        with open(path, 'r') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"Invalid JSON: {e}", path=path) from e
    return DatasetManifest.from_dict(data, path)


def _count_rows(path: str) -> int:
    if not os.path.exists(path):
        return 0
    with open(path, 'r') as f:
        return sum(1 for _ in f)


def write_sample(directory: str, index: int, sample: StereoSample, depth_semantics: str = 'ray',
                 keep_ndc: bool = False) -> None:
    """Write one stereo sample and append its rows to the text files.

    Raises:
        DatasetFormatError: If ``index`` was already written or would leave a gap
    """
    image_left = os.path.join(directory, 'image_L', _frame_name(index, 'ppm'))
    rows = _count_rows(os.path.join(directory, POSES_FILE))
    if os.path.exists(image_left) or index < rows:
        raise DatasetFormatError(f"Sample index {index} already written", path=directory)
    if index != rows:
        raise DatasetFormatError(f"Sample index {index} would leave a gap after {rows} rows", path=directory)

    folders = ['image_L', 'image_R', 'depth_L', 'depth_R', FEATURES_DIR]
    if keep_ndc:
        folders += ['ndc_L', 'ndc_R']
    for folder in folders:
        os.makedirs(os.path.join(directory, folder), exist_ok=True)

    write_ppm(image_left, sample.left.rgb)
    write_ppm(os.path.join(directory, 'image_R', _frame_name(index, 'ppm')), sample.right.rgb)
    write_depth(os.path.join(directory, 'depth_L', _frame_name(index, 'bin')), sample.left_depth, depth_semantics)
    write_depth(os.path.join(directory, 'depth_R', _frame_name(index, 'bin')), sample.right_depth, depth_semantics)
    if keep_ndc:
        write_depth(os.path.join(directory, 'ndc_L', _frame_name(index, 'bin')), sample.left.ndc, 'ndc')
        write_depth(os.path.join(directory, 'ndc_R', _frame_name(index, 'bin')), sample.right.ndc, 'ndc')
    write_features(os.path.join(directory, FEATURES_DIR, _frame_name(index, 'txt')), sample.observations)

    with open(os.path.join(directory, POSES_FILE), 'a') as f:
        f.write(format_pose_row(sample.left.camera_pose) + '\n')
    with open(os.path.join(directory, POSES_RIGHT_FILE), 'a') as f:
        f.write(format_pose_row(sample.right.camera_pose) + '\n')
    with open(os.path.join(directory, GPS_FILE), 'a') as f:
        f.write('%.6f %.6f %.6f\n' % (sample.timestamp, sample.gps[0], sample.gps[1]))
    with open(os.path.join(directory, TIMES_FILE), 'a') as f:
        f.write('%.6f\n' % sample.timestamp)
    with open(os.path.join(directory, STAMPS_FILE), 'a') as f:
        f.write('%d %d %d %.9f %.9f\n' % (index, sample.left.uni_tick, sample.right.uni_tick,
                                          sample.left.in_game_time, sample.right.in_game_time))


def _read_rows(path: str, columns: int) -> List[List[str]]:
    rows = []
    with open(path, 'r') as f:
        for number, line in enumerate(f, start=1):
            parts = line.split()
            if len(parts) != columns:
                raise DatasetFormatError(f"Expected {columns} columns, got {len(parts)}", path=path, line=number)
            rows.append(parts)
    return rows


def _parse_pose(values: List[str], path: str, line: int) -> np.ndarray:
    try:
        matrix = np.array([float(v) for v in values]).reshape(3, 4)
    except ValueError as e:
        raise DatasetFormatError(f"Malformed pose value: {e}", path=path, line=line) from e
    if not is_rotation(matrix[:, :3], READ_ORTHONORMAL_TOLERANCE):
        raise DatasetFormatError("Rotation is not orthonormal within 1e-6", path=path, line=line)
    pose = np.eye(4)
    pose[:3, :] = matrix
    return pose


def read_poses(path: str) -> List[np.ndarray]:
    """Parse a KITTI pose file (12 values per row) into 4x4 matrices."""
    return [_parse_pose(row, path, number) for number, row in enumerate(_read_rows(path, 12), start=1)]


def read_times(path: str) -> np.ndarray:
    try:
        return np.array([float(row[0]) for row in _read_rows(path, 1)], dtype=np.float64)
    except ValueError as e:
        raise DatasetFormatError(f"Malformed timestamp: {e}", path=path) from e


def read_trajectory(path: str) -> Trajectory:
    """Read a trajectory from a dataset directory or a pose file.

    A directory is read as ``poses.txt`` plus ``times.txt``. A file may hold 12
    columns (KITTI rows; timestamps come from a sibling ``times.txt`` or default
    to the row index) or 13 columns (timestamp then KITTI row).

    Raises:
        DatasetFormatError: Malformed rows (with line number), rotations that are
            not orthonormal within 1e-6, or timestamps that do not increase
    """
    if os.path.isdir(path):
        pose_path = os.path.join(path, POSES_FILE)
        times_path = os.path.join(path, TIMES_FILE)
    else:
        pose_path = path
        times_path = os.path.join(os.path.dirname(path) or '.', TIMES_FILE)

    with open(pose_path, 'r') as f:
        first = f.readline().split()
    if len(first) == 13:
        rows = _read_rows(pose_path, 13)
        try:
            timestamps = np.array([float(row[0]) for row in rows])
        except ValueError as e:
            raise DatasetFormatError(f"Malformed timestamp: {e}", path=pose_path) from e
        poses = [_parse_pose(row[1:], pose_path, number) for number, row in enumerate(rows, start=1)]
    else:
        poses = read_poses(pose_path)
        if os.path.exists(times_path):
            timestamps = read_times(times_path)
        else:
            timestamps = np.arange(len(poses), dtype=np.float64)
    if len(timestamps) != len(poses):
        raise DatasetFormatError(f"{len(timestamps)} timestamps for {len(poses)} poses", path=pose_path)
    if len(timestamps) > 1 and not np.all(np.diff(timestamps) > 0):
        line = int(np.argmax(np.diff(timestamps) <= 0)) + 2
        raise DatasetFormatError("Timestamps must be strictly increasing", path=times_path, line=line)
    return Trajectory(timestamps, np.array(poses).reshape(-1, 4, 4))


def write_trajectory(directory: str, trajectory: Trajectory) -> None:
    """Write ``poses.txt`` and ``times.txt`` for a trajectory."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, POSES_FILE), 'w') as f:
        for matrix in trajectory.poses:
            f.write(' '.join(POSE_FORMAT % v for v in matrix[:3, :].reshape(-1)) + '\n')
    with open(os.path.join(directory, TIMES_FILE), 'w') as f:
        for stamp in trajectory.timestamps:
            f.write('%.6f\n' % stamp)


def read_sample(directory: str, index: int) -> StereoSample:
    """Read back sample ``index`` written by :func:`write_sample`."""
    manifest = read_manifest(directory)
    name_ppm, name_bin = _frame_name(index, 'ppm'), _frame_name(index, 'bin')
    left_rgb = read_ppm(os.path.join(directory, 'image_L', name_ppm))
    right_rgb = read_ppm(os.path.join(directory, 'image_R', name_ppm))
    left_depth, _ = read_depth(os.path.join(directory, 'depth_L', name_bin))
    right_depth, _ = read_depth(os.path.join(directory, 'depth_R', name_bin))
    left_ndc = right_ndc = None
    if manifest.keep_ndc:
        left_ndc, _ = read_depth(os.path.join(directory, 'ndc_L', name_bin))
        right_ndc, _ = read_depth(os.path.join(directory, 'ndc_R', name_bin))

    left_pose = PoseSE3.from_matrix(read_poses(os.path.join(directory, POSES_FILE))[index],
                                    READ_ORTHONORMAL_TOLERANCE)
    right_pose = PoseSE3.from_matrix(read_poses(os.path.join(directory, POSES_RIGHT_FILE))[index],
                                     READ_ORTHONORMAL_TOLERANCE)
    gps_row = _read_rows(os.path.join(directory, GPS_FILE), 3)[index]
    stamp_row = _read_rows(os.path.join(directory, STAMPS_FILE), 5)[index]
    mount = manifest.rig['mount']
    mount_pose = PoseSE3(VEHICLE_FROM_CAMERA, (mount['x'], mount['y'], mount['z']))

    left = FrameBuffer(left_rgb, left_ndc, None, int(stamp_row[1]), float(stamp_row[3]), left_pose, 'left')
    right = FrameBuffer(right_rgb, right_ndc, None, int(stamp_row[2]), float(stamp_row[4]), right_pose, 'right')
    observations = read_features(os.path.join(directory, FEATURES_DIR, _frame_name(index, 'txt')))
    return StereoSample(index, left, right, left_depth, right_depth, left_pose @ mount_pose.inverse(),
                        (float(gps_row[1]), float(gps_row[2])), float(gps_row[0]), manifest.method,
                        tuple(observations))


def verify_dataset(directory: str) -> DatasetManifest:
    """Check that the manifest agrees with the files on disk.

    Raises:
        DatasetFormatError: If frame counts or row counts disagree
    """
    manifest = read_manifest(directory)
    count = manifest.frame_count
    for folder in ('image_L', 'image_R', 'depth_L', 'depth_R', FEATURES_DIR):
        folder_path = os.path.join(directory, folder)
        on_disk = len(os.listdir(folder_path)) if os.path.isdir(folder_path) else 0
        if on_disk != count:
            raise DatasetFormatError(f"{folder} holds {on_disk} files, manifest lists {count}", path=directory)
    for name in (POSES_FILE, POSES_RIGHT_FILE, GPS_FILE, TIMES_FILE, STAMPS_FILE):
        rows = _count_rows(os.path.join(directory, name))
        if rows != count:
            raise DatasetFormatError(f"{name} has {rows} rows, manifest lists {count}", path=directory)
    if len(manifest.frames) != count:
        raise DatasetFormatError(f"Manifest frame list has {len(manifest.frames)} entries for {count} frames",
                                 path=directory)
    return manifest


class DatasetManager:
    """Writer for one capture session's dataset directory."""

    def __init__(self, directory: str, manifest: DatasetManifest, calibration: CalibrationRecord):
        """Initialize the dataset manager.

        Args:
            directory: Output directory; must not already hold a dataset
            manifest: Manifest template; frame bookkeeping is filled in while writing
            calibration: Calibration written once at start
        """
        self.directory = directory
        self.manifest = manifest
        self.calibration = calibration
        self.positions: List[np.ndarray] = []

    def start_session(self) -> None:
        if os.path.exists(os.path.join(self.directory, MANIFEST_FILE)):
            raise DatasetFormatError("Directory already holds a dataset", path=self.directory)
        os.makedirs(self.directory, exist_ok=True)
        write_calibration(self.directory, self.calibration)
        logger.debug(f"Dataset session started in {self.directory}")

    def record_sample(self, sample: StereoSample) -> None:
        write_sample(self.directory, sample.index, sample, self.manifest.depth_semantics, self.manifest.keep_ndc)
        self.manifest.frames.append({'index': sample.index, 'time': round(sample.timestamp, 6)})
        self.manifest.frame_count += 1
        self.positions.append(sample.left.camera_pose.translation)

    def trajectory_length(self) -> float:
        if len(self.positions) < 2:
            return 0.0
        return float(np.sum(np.linalg.norm(np.diff(np.array(self.positions), axis=0), axis=1)))

    def finalize(self, complete: bool) -> DatasetManifest:
        """Write the manifest; an aborted session is flagged ``complete=false``."""
        self.manifest.trajectory_length_m = self.trajectory_length()
        self.manifest.complete = complete
        write_manifest(self.directory, self.manifest)
        logger.debug(f"Manifest written ({self.manifest.frame_count} frames, complete={complete})")
        return self.manifest


def convert_dataset_depth(directory: str, out_directory: str, kind: str, semantics: str = 'ray') -> int:
    """Convert the raw NDC rasters of a dataset with another conversion profile.

    Writes ``depth_L`` and ``depth_R`` under ``out_directory``, one file per
    stored NDC raster.

    Returns:
        int: Number of rasters converted

    Raises:
        DatasetFormatError: If the dataset was captured without ``keep_ndc``
    """
    manifest = read_manifest(directory)
    if not manifest.keep_ndc:
        raise DatasetFormatError("Dataset holds no raw NDC rasters (captured without keep_ndc)", path=directory)
    rig = CameraRig.from_settings(manifest.rig)
    profile = DepthConversionProfile(kind, rig.near_clip_m, rig.far_clip_m)
    map_uv = compute_map_uv(rig)
    converted = 0
    for side in ('L', 'R'):
        os.makedirs(os.path.join(out_directory, f'depth_{side}'), exist_ok=True)
        for index in range(manifest.frame_count):
            ndc, stored = read_depth(os.path.join(directory, f'ndc_{side}', _frame_name(index, 'bin')))
            if stored != 'ndc':
                raise DatasetFormatError(f"Expected an NDC raster, found {stored}", path=directory)
            depth = ndc_to_depth(ndc, map_uv, profile, semantics)
            write_depth(os.path.join(out_directory, f'depth_{side}', _frame_name(index, 'bin')), depth, semantics)
            converted += 1
    logger.info(f"Converted {converted} rasters with {kind}/{semantics} into {out_directory}")
    return converted
