"""
Odometry model for Py-TeFS.

A minimal deterministic stereo visual odometry over beacon correspondences.
Data association comes from beacon ids, so the estimate only reflects the
geometric quality of each stereo pair. There is no bundle adjustment and no
loop closure: per-frame motions are simply chained from the first pose.
"""

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from py_tefs.models.analysis_model import Trajectory
from py_tefs.models.sample_model import FeatureObservation
from py_tefs.utils.dataset_manager import (FEATURES_DIR, CalibrationRecord, read_calibration, read_features,
                                           read_manifest, read_trajectory, write_trajectory)
from py_tefs.utils.errors import DegenerateConfigurationError, StereoGeometryError
from py_tefs.utils.geometry_utils import PoseSE3, fit_rigid_transform

logger = logging.getLogger('py-tefs.odometry')

DEFAULT_MAX_DEPTH_M = 40.0
MIN_CORRESPONDENCES = 3


@dataclass
class VOResult:
    """Estimated trajectory plus per-frame diagnostics."""

    trajectory: Trajectory
    holes: List[int] = field(default_factory=list)
    residuals: List[float] = field(default_factory=list)
    noise_sigma: float = 0.0
    seed: int = 0

    @property
    def partial(self) -> bool:
        return bool(self.holes)

    def summary(self) -> Dict:
        residuals = np.array(self.residuals) if self.residuals else np.zeros(1)
        return {
            'frames': len(self.trajectory),
            'holes': list(self.holes),
            'partial': self.partial,
            'noise_sigma': self.noise_sigma,
            'seed': self.seed,
            'residual_rms_mean': float(np.mean(residuals)),
            'residual_rms_max': float(np.max(residuals)),
        }


def triangulate_stereo(obs: FeatureObservation, calib: CalibrationRecord) -> np.ndarray:
    """Camera-frame point of a rectified stereo observation.

    Raises:
        StereoGeometryError: If the disparity is not positive
    """
    disparity = obs.left[0] - obs.right[0]
    if not disparity > 0:
        raise StereoGeometryError(f"Beacon {obs.beacon_id} has disparity {disparity:.6f} px")
    z = calib.fx * calib.baseline_m / disparity
    x = (obs.left[0] - calib.cx) * z / calib.fx
    y = (obs.left[1] - calib.cy) * z / calib.fy
    return np.array([x, y, z])


def estimate_motion(points_prev: Dict[int, np.ndarray], points_curr: Dict[int, np.ndarray]) -> Tuple[PoseSE3, float]:
    """Rigid motion of the camera between two frames.

    Finds T with points_prev ≈ T · points_curr over shared beacon ids, which is
    the current camera pose expressed in the previous camera frame.

    Returns:
        Tuple[PoseSE3, float]: The motion and the RMS registration residual (m)

    Raises:
        DegenerateConfigurationError: Fewer than 3 shared, non-collinear points
    """
    shared = sorted(set(points_prev) & set(points_curr))
    if len(shared) < MIN_CORRESPONDENCES:
        raise DegenerateConfigurationError(f"Only {len(shared)} shared correspondences")
    target = np.array([points_prev[i] for i in shared])
    source = np.array([points_curr[i] for i in shared])
    rotation, translation, _ = fit_rigid_transform(source, target)
    motion = PoseSE3(rotation, translation)
    residual = float(np.sqrt(np.mean(np.sum((motion.transform_points(source) - target) ** 2, axis=1))))
    return motion, residual


def frame_points(observations: Sequence[FeatureObservation], calib: CalibrationRecord,
                 max_depth_m: Optional[float] = DEFAULT_MAX_DEPTH_M) -> Dict[int, np.ndarray]:
    """Triangulate the usable observations of one frame, keyed by beacon id."""
    points = {}
    for obs in observations:
        if not obs.disparity > 0:
            continue
        point = triangulate_stereo(obs, calib)
        if max_depth_m is None or point[2] <= max_depth_m:
            points[obs.beacon_id] = point
    return points


def check_disparity_sign(frames: Sequence[Sequence[FeatureObservation]]) -> None:
    """Reject datasets whose left and right labels are swapped.

    Raises:
        StereoGeometryError: If most observations have negative disparity
    """
    negative = sum(1 for observations in frames for obs in observations if obs.disparity < 0)
    total = sum(len(observations) for observations in frames)
    if total and negative * 2 > total:
        raise StereoGeometryError(f"{negative} of {total} observations have negative disparity; "
                                  "left and right images look swapped")


def chain_motions(first_pose: PoseSE3, timestamps: np.ndarray, frames: Sequence[Dict[int, np.ndarray]]) -> VOResult:
    """Compose frame-to-frame motions into a trajectory starting at ``first_pose``.

    Frames whose motion cannot be estimated are holes: the previous motion is
    repeated (identity at the start) and the trajectory is marked partial.
    """
    poses = [first_pose]
    holes: List[int] = []
    residuals: List[float] = []
    last_motion = PoseSE3.identity()
    for k in range(1, len(frames)):
        try:
            motion, residual = estimate_motion(frames[k - 1], frames[k])
            residuals.append(residual)
            last_motion = motion
        except DegenerateConfigurationError as e:
            logger.warning(f"Frame {k}: {e}; holding the previous motion")
            holes.append(k)
            motion = last_motion
        poses.append(poses[-1] @ motion)
    trajectory = Trajectory.from_poses(timestamps[:len(poses)], poses, partial=bool(holes))
    return VOResult(trajectory, holes, residuals)


def run_vo(directory: str, noise_sigma: float = 0.0, seed: int = 0,
           max_depth_m: Optional[float] = DEFAULT_MAX_DEPTH_M) -> VOResult:
    """Run stereo odometry over a captured dataset.

    Args:
        directory: Dataset directory written by a capture session
        noise_sigma: Gaussian pixel noise added to every observation
        seed: Seed of the noise generator
        max_depth_m: Triangulated points farther than this are ignored

    Returns:
        VOResult: Trajectory anchored at the first ground-truth pose
    """
    manifest = read_manifest(directory)
    calib = read_calibration(directory)
    ground_truth = read_trajectory(directory)
    if len(ground_truth) == 0:
        return VOResult(ground_truth, noise_sigma=noise_sigma, seed=seed)

    observations = [read_features(os.path.join(directory, FEATURES_DIR, f"{i:06d}.txt"))
                    for i in range(manifest.frame_count)]
    check_disparity_sign(observations)
    rng = np.random.default_rng(seed)
    frames = []
    for frame in observations:
        noisy = [obs.with_noise(rng, noise_sigma) for obs in frame]
        frames.append(frame_points(noisy, calib, max_depth_m))

    result = chain_motions(ground_truth.pose(0), ground_truth.timestamps, frames)
    result.noise_sigma = noise_sigma
    result.seed = seed
    logger.info(f"VO over {len(frames)} frames, {len(result.holes)} holes")
    return result


def write_vo_result(directory: str, result: VOResult) -> None:
    """Write ``poses.txt``, ``times.txt`` and ``summary.json`` into ``directory``."""
    write_trajectory(directory, result.trajectory)
    with open(os.path.join(directory, 'summary.json'), 'w') as f:
        f.write(json.dumps(result.summary(), indent=2, sort_keys=True) + '\n')
