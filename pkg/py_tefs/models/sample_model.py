"""Stereo sample and feature observation records shared by capture, storage and odometry."""

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from py_tefs.models.render_model import FrameBuffer
from py_tefs.utils.geometry_utils import PoseSE3

TEFS = 'tefs'
NAIVE_SWAP = 'naiveSwap'
DUAL_VIEWPORT = 'dualViewport'
METHODS = (TEFS, NAIVE_SWAP, DUAL_VIEWPORT)

# Command-line aliases.
METHOD_ALIASES = {'tefs': TEFS, 'naive': NAIVE_SWAP, 'dual': DUAL_VIEWPORT}


@dataclass(frozen=True)
class FeatureObservation:
    """A beacon seen by both cameras of one stereo pair, in pixel coordinates."""

    beacon_id: int
    left: Tuple[float, float]
    right: Tuple[float, float]
    noise_sigma: float = 0.0

    @property
    def disparity(self) -> float:
        return self.left[0] - self.right[0]

    def with_noise(self, rng: np.random.Generator, sigma: float) -> "FeatureObservation":
        """Copy with isotropic gaussian pixel noise added to both observations."""
        if sigma <= 0.0:
            return self
        noise = rng.normal(0.0, sigma, size=4)
        return FeatureObservation(self.beacon_id,
                                  (self.left[0] + noise[0], self.left[1] + noise[1]),
                                  (self.right[0] + noise[2], self.right[1] + noise[3]),
                                  sigma)


@dataclass(frozen=True, eq=False)
class StereoSample:
    """Paired left and right views of one capture cycle."""

    index: int
    left: FrameBuffer
    right: FrameBuffer
    left_depth: np.ndarray
    right_depth: np.ndarray
    vehicle_pose: PoseSE3
    gps: Tuple[float, float]
    timestamp: float
    method: str
    observations: Tuple[FeatureObservation, ...] = field(default_factory=tuple)
    world_shift_m: float = 0.0

    @property
    def temporal_disparity(self) -> float:
        return self.right.in_game_time - self.left.in_game_time
