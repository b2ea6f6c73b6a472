"""
Analysis model for Py-TeFS.

Trajectory evaluation: timestamp association, least-squares alignment,
absolute pose error (meters and percent of trajectory length), relative pose
error and the length-ratio scale correction.
"""

import csv
import logging
import math
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from py_tefs.utils.errors import AssociationError, DegenerateConfigurationError, TrajectoryError
from py_tefs.utils.geometry_utils import PoseSE3, fit_rigid_transform

logger = logging.getLogger('py-tefs.analysis')

ALIGN_NONE = 'none'
ALIGN_RIGID = 'rigid'
ALIGN_SIMILARITY = 'similarity'
ALIGN_MODES = (ALIGN_NONE, ALIGN_RIGID, ALIGN_SIMILARITY)

FIXED_DISTANCE_M = 100.0
REPORT_FIELDS = ('metric', 'mean', 'median', 'rmse', 'max', 'alignment', 'trajectory_length_m',
                 'matched', 'unmatched')


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Timestamped SE(3) pose sequence; ``poses`` is (N, 4, 4)."""

    timestamps: np.ndarray
    poses: np.ndarray
    partial: bool = False

    def __post_init__(self):
        timestamps = np.array(self.timestamps, dtype=np.float64).reshape(-1)
        poses = np.array(self.poses, dtype=np.float64).reshape(-1, 4, 4)
        if len(timestamps) != len(poses):
            raise TrajectoryError(f"{len(timestamps)} timestamps for {len(poses)} poses")
        if len(timestamps) > 1 and not np.all(np.diff(timestamps) > 0):
            raise TrajectoryError("Trajectory timestamps must be strictly increasing")
        timestamps.setflags(write=False)
        poses.setflags(write=False)
        object.__setattr__(self, 'timestamps', timestamps)
        object.__setattr__(self, 'poses', poses)

    @classmethod
    def from_poses(cls, timestamps: Sequence[float], poses: Sequence[PoseSE3], partial: bool = False) -> "Trajectory":
        matrices = np.array([pose.as_matrix() for pose in poses]).reshape(-1, 4, 4)
        return cls(np.asarray(timestamps, dtype=np.float64), matrices, partial)

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def positions(self) -> np.ndarray:
        return self.poses[:, :3, 3]

    def pose(self, index: int) -> PoseSE3:
        return PoseSE3(self.poses[index, :3, :3], self.poses[index, :3, 3])

    def subset(self, indices: np.ndarray) -> "Trajectory":
        return Trajectory(self.timestamps[indices], self.poses[indices], self.partial)

    def transformed(self, rotation: np.ndarray, translation: np.ndarray, scale: float = 1.0) -> "Trajectory":
        """Apply p -> s·R·p + t to every pose (rotations are rotated, not scaled)."""
        poses = np.array(self.poses)
        poses[:, :3, :3] = rotation @ self.poses[:, :3, :3]
        poses[:, :3, 3] = scale * self.positions @ np.asarray(rotation).T + translation
        return replace(self, poses=poses)


@dataclass(frozen=True)
class MetricReport:
    """Summary statistics of one error metric."""

    metric: str
    mean: float
    median: float
    rmse: float
    max: float
    alignment: str
    trajectory_length_m: float
    matched: int = 0
    unmatched: int = 0

    def as_row(self) -> Dict[str, object]:
        return {name: getattr(self, name) for name in REPORT_FIELDS}


def _report(metric: str, errors: np.ndarray, alignment: str, length: float,
            matched: int, unmatched: int) -> MetricReport:
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise TrajectoryError(f"No samples for {metric}")
    return MetricReport(metric, float(np.mean(errors)), float(np.median(errors)),
                        float(np.sqrt(np.mean(errors ** 2))), float(np.max(errors)),
                        alignment, length, matched, unmatched)


def traj_length(trajectory: Trajectory) -> float:
    """Sum of distances between consecutive positions.

    Raises:
        TrajectoryError: With fewer than two poses
    """
    if len(trajectory) < 2:
        raise TrajectoryError(f"Trajectory length needs at least 2 poses, got {len(trajectory)}")
    return float(np.sum(np.linalg.norm(np.diff(trajectory.positions, axis=0), axis=1)))


def associate(est: Trajectory, gt: Trajectory, tolerance: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Match poses by nearest timestamp.

    Candidate pairs within ``tolerance`` are taken greedily, closest first, so
    every pose is matched at most once. The default tolerance is half the
    median ground-truth frame interval.

    Returns:
        Tuple[np.ndarray, np.ndarray]: Matched est and gt indices, in time order

    Raises:
        AssociationError: If nothing matches
    """
    if len(est) == 0 or len(gt) == 0:
        raise AssociationError("Cannot associate an empty trajectory")
    if tolerance is None:
        tolerance = 0.5 * float(np.median(np.diff(gt.timestamps))) if len(gt) > 1 else 0.0
    candidates = []
    for i, stamp in enumerate(est.timestamps):
        position = int(np.searchsorted(gt.timestamps, stamp))
        for j in (position - 1, position):
            if 0 <= j < len(gt):
                gap = abs(stamp - gt.timestamps[j])
                if gap <= tolerance:
                    candidates.append((gap, i, j))
    candidates.sort()
    used_est, used_gt, pairs = set(), set(), []
    for _, i, j in candidates:
        if i not in used_est and j not in used_gt:
            used_est.add(i)
            used_gt.add(j)
            pairs.append((i, j))
    if not pairs:
        raise AssociationError(f"No timestamps match within {tolerance:.6f} s")
    pairs.sort()
    est_index, gt_index = (np.array(column, dtype=np.int64) for column in zip(*pairs))
    return est_index, gt_index


def umeyama_align(est: Trajectory, gt: Trajectory, with_scale: bool = False):
    """Similarity (or rigid) transform minimizing Σ‖gt_i − (s·R·est_i + t)‖².

    Both trajectories must already be associated pose for pose.

    Returns:
        tuple: (rotation, translation, scale); scale is 1 when ``with_scale`` is False

    Raises:
        DegenerateConfigurationError: Fewer than 3 poses or collinear positions
    """
    if len(est) != len(gt):
        raise TrajectoryError(f"Alignment needs associated trajectories, got {len(est)} and {len(gt)} poses")
    return fit_rigid_transform(est.positions, gt.positions, with_scale=with_scale)


def _associated(est: Trajectory, gt: Trajectory, tolerance: Optional[float]):
    est_index, gt_index = associate(est, gt, tolerance)
    unmatched = len(est) - len(est_index)
    if unmatched:
        logger.debug(f"{unmatched} estimated poses without ground truth match")
    return est.subset(est_index), gt.subset(gt_index), unmatched


def align_trajectory(est: Trajectory, gt: Trajectory, align: str) -> Trajectory:
    """Return ``est`` mapped onto associated ``gt`` with the requested alignment."""
    if align not in ALIGN_MODES:
        raise ValueError(f"Unknown alignment '{align}', expected one of {ALIGN_MODES}")
    if align == ALIGN_NONE:
        return est
    rotation, translation, scale = umeyama_align(est, gt, with_scale=(align == ALIGN_SIMILARITY))
    return est.transformed(rotation, translation, scale)


def ape(est: Trajectory, gt: Trajectory, align: str = ALIGN_RIGID,
        tolerance: Optional[float] = None) -> Tuple[MetricReport, MetricReport]:
    """Absolute pose error of ``est`` against ``gt``.

    Returns:
        Tuple[MetricReport, MetricReport]: APE in meters and in percent of the
        associated ground-truth trajectory length
    """
    est_matched, gt_matched, unmatched = _associated(est, gt, tolerance)
    aligned = align_trajectory(est_matched, gt_matched, align)
    errors = np.linalg.norm(aligned.positions - gt_matched.positions, axis=1)
    length = traj_length(gt_matched) if len(gt_matched) > 1 else 0.0
    meters = _report('APE_m', errors, align, length, len(errors), unmatched)
    if length > 0:
        percent = errors / length * 100.0
    elif np.all(errors == 0.0):
        percent = np.zeros_like(errors)
    else:
        logger.warning("Ground truth has zero length; APE_pct is infinite")
        percent = np.full_like(errors, math.inf)
    return meters, _report('APE_pct', percent, align, length, len(errors), unmatched)


def _relative_errors(est: Trajectory, gt: Trajectory, pairs: Sequence[Tuple[int, int]]):
    translation, rotation = [], []
    for i, j in pairs:
        est_motion = np.linalg.inv(est.poses[i]) @ est.poses[j]
        gt_motion = np.linalg.inv(gt.poses[i]) @ gt.poses[j]
        error = np.linalg.inv(gt_motion) @ est_motion
        translation.append(np.linalg.norm(error[:3, 3]))
        rotation.append(_rotation_angle_deg(error[:3, :3]))
    return np.array(translation), np.array(rotation)


def _rotation_angle_deg(rotation: np.ndarray) -> float:
    # Rotation.from_matrix re-orthonormalizes the accumulated rounding
    return float(np.degrees(Rotation.from_matrix(rotation).magnitude()))


def rpe(est: Trajectory, gt: Trajectory, delta: int = 1,
        tolerance: Optional[float] = None) -> Tuple[MetricReport, MetricReport]:
    """Relative pose error over pose pairs ``delta`` frames apart.

    Returns:
        Tuple[MetricReport, MetricReport]: Translational (m) and rotational (deg) error

    Raises:
        TrajectoryError: If ``delta`` is not smaller than the associated length
    """
    est_matched, gt_matched, unmatched = _associated(est, gt, tolerance)
    if delta < 1 or delta >= len(est_matched):
        raise TrajectoryError(f"RPE delta {delta} needs 1 <= delta < {len(est_matched)}")
    pairs = [(i, i + delta) for i in range(len(est_matched) - delta)]
    translation, rotation = _relative_errors(est_matched, gt_matched, pairs)
    length = traj_length(gt_matched)
    return (_report('RPE_trans', translation, ALIGN_NONE, length, len(est_matched), unmatched),
            _report('RPE_rot', rotation, ALIGN_NONE, length, len(est_matched), unmatched))


def rpe_fixed_distance(est: Trajectory, gt: Trajectory, distance: float = FIXED_DISTANCE_M,
                       tolerance: Optional[float] = None) -> Optional[Tuple[MetricReport, MetricReport]]:
    """RPE over all pose pairs separated by ``distance`` meters of ground-truth travel.

    Each pose is paired with the first later pose at least ``distance`` away
    along the path. Returns None when the trajectory is shorter than that.
    """
    est_matched, gt_matched, unmatched = _associated(est, gt, tolerance)
    if len(gt_matched) < 2:
        return None
    travelled = np.concatenate(([0.0], np.cumsum(np.linalg.norm(np.diff(gt_matched.positions, axis=0), axis=1))))
    pairs = []
    for i in range(len(travelled)):
        j = int(np.searchsorted(travelled, travelled[i] + distance - 1e-9))
        if j < len(travelled):
            pairs.append((i, j))
    if not pairs:
        return None
    translation, rotation = _relative_errors(est_matched, gt_matched, pairs)
    suffix = f"{distance:g}m"
    return (_report(f'RPE_trans_{suffix}', translation, ALIGN_NONE, float(travelled[-1]), len(est_matched), unmatched),
            _report(f'RPE_rot_{suffix}', rotation, ALIGN_NONE, float(travelled[-1]), len(est_matched), unmatched))


def scale_correct(est: Trajectory, gt: Trajectory) -> Trajectory:
    """Multiply estimated translations by L_gt / L_est; rotations are untouched.

    Raises:
        TrajectoryError: If the estimate has zero length
    """
    est_length = traj_length(est)
    gt_length = traj_length(gt)
    if est_length == 0.0:
        raise TrajectoryError("Cannot scale-correct a zero-length estimate")
    if gt_length == 0.0:
        raise TrajectoryError("Cannot scale-correct against a zero-length ground truth")
    factor = gt_length / est_length
    poses = np.array(est.poses)
    poses[:, :3, 3] *= factor
    logger.debug(f"Scale correction factor {factor:.9f}")
    return replace(est, poses=poses)


def evaluate(est: Trajectory, gt: Trajectory, align: str = ALIGN_RIGID, correct_scale: bool = False,
             delta: int = 1, fixed_distance: Optional[float] = FIXED_DISTANCE_M,
             tolerance: Optional[float] = None) -> List[MetricReport]:
    """Full metric suite: APE (m, %), per-frame RPE and, when long enough, fixed-distance RPE."""
    if correct_scale:
        est = scale_correct(est, gt)
    try:
        reports = list(ape(est, gt, align, tolerance))
    except DegenerateConfigurationError:
        logger.warning(f"Degenerate ground truth for {align} alignment; falling back to no alignment")
        reports = list(ape(est, gt, ALIGN_NONE, tolerance))
    reports.extend(rpe(est, gt, delta, tolerance))
    if fixed_distance:
        fixed = rpe_fixed_distance(est, gt, fixed_distance, tolerance)
        if fixed is not None:
            reports.extend(fixed)
    return reports


def format_reports(reports: Sequence[MetricReport], title: Optional[str] = None) -> str:
    """Plain-text table of metric reports."""
    lines = []
    if title:
        lines.append(title)
    lines.append(f"{'metric':<18}{'mean':>14}{'median':>14}{'rmse':>14}{'max':>14}  alignment")
    for report in reports:
        lines.append(f"{report.metric:<18}{report.mean:>14.6f}{report.median:>14.6f}"
                     f"{report.rmse:>14.6f}{report.max:>14.6f}  {report.alignment}")
    if reports:
        lines.append(f"trajectory length {reports[0].trajectory_length_m:.3f} m, "
                     f"{reports[0].matched} matched, {reports[0].unmatched} unmatched")
    return "\n".join(lines)


def write_reports_csv(reports: Sequence[MetricReport], path: str, extra: Optional[Dict[str, str]] = None) -> None:
    """Write a machine-readable report table; ``extra`` columns are prepended to every row."""
    extra = extra or {}
    with open(path, 'w', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=list(extra) + list(REPORT_FIELDS), lineterminator='\n')
        writer.writeheader()
        for report in reports:
            row = dict(extra)
            row.update({k: (repr(v) if isinstance(v, float) else v) for k, v in report.as_row().items()})
            writer.writerow(row)


def read_reports_csv(path: str) -> List[Dict[str, str]]:
    with open(path, 'r', newline='') as f:
        return list(csv.DictReader(f))
