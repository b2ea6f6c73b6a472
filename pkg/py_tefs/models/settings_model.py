"""
Scenario settings model for Py-TeFS.

A scenario is a JSON document describing the engine, vehicle path, camera rig,
capture schedule, scene generation and game-day model of one session. The
model merges the built-in defaults, an optional scenario file and command-line
overrides into the effective configuration every subcommand prints.
"""

import copy
import json
import logging
import os
from typing import Any, Dict, List, Optional

from py_tefs.models.render_model import CONDITION_ALIASES, CONDITION_PROFILES
from py_tefs.models.sample_model import METHOD_ALIASES, METHODS
from py_tefs.utils.errors import ConfigurationError

logger = logging.getLogger('py-tefs.settings')

SCENARIO_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                            'resources', 'scenarios')

# (cycle_ticks, preset_tick, left_tick, right_tick)
SCHEDULES = {
    'camera-ready': (10, 7, 8, 10),
    'draft': (12, 9, 10, 12),
}

FULL_IMAGE_SIZE = [1920, 1080]

DEFAULT_SETTINGS: Dict[str, Any] = {
    'name': 'unnamed',
    'seed': 0,
    'engine': {
        'tick_duration_s': 1.0 / 60.0,
        'leak_fraction': 1.0,
    },
    'vehicle': {
        'start': {'x': 0.0, 'y': 0.0, 'z': 0.0, 'heading_deg': 0.0},
        'speed_kmh': 10.0,
        'path': [],
        'duration_s': None,
    },
    'rig': {
        'baseline_m': 0.54,
        'hfov_deg': 90.0,
        'vfov_deg': 59.0,
        'near_clip_m': 0.01,
        'far_clip_m': 600.0,
        'image_size': [320, 180],
        'profile': 'default',
        'mount': {'x': 1.5, 'y': 0.0, 'z': 1.4},
    },
    'capture': {
        'cycle_ticks': 10,
        'preset_tick': 7,
        'left_tick': 8,
        'right_tick': 10,
        'engine_temporal_disparity_s': 0.00025,
        'naive_frame_time_s': 0.0167,
        'naive_extra_latency_frames': 0,
        'depth_semantics': 'ray',
        'depth_profile': 'simNative',
        'keep_ndc': False,
        'cycles': None,
    },
    'scene': {
        'beacon_spacing_m': 4.0,
        'beacon_lateral_m': [3.0, 8.0],
        'beacon_height_m': [0.3, 3.5],
        'beacon_size_m': [0.2, 0.4],
        'building_spacing_m': 18.0,
        'building_lateral_m': [12.0, 16.0],
        'building_size_m': [3.0, 6.0],
        'building_height_m': [4.0, 12.0],
        'ground_tile_m': 10.0,
        'ground_margin_m': 25.0,
        'clearance_m': 2.5,
        'movers': [],
    },
    'timebase': {
        'day_duration_s': 2880.0,
    },
    'run': {
        'method': 'tefs',
        'condition': 'sunny',
        'noise_sigma': 0.0,
    },
}


def _merge(base: Dict[str, Any], update: Dict[str, Any], where: str = '') -> Dict[str, Any]:
    """Recursively merge ``update`` into a copy of ``base``, rejecting unknown keys."""
    merged = copy.deepcopy(base)
    for key, value in update.items():
        if key not in base:
            raise ConfigurationError(f"Unknown setting '{where}{key}'")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigurationError(f"Setting '{where}{key}' must be an object")
            merged[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def list_bundled_scenarios() -> List[str]:
    """Names of the scenario files shipped with the package."""
    if not os.path.isdir(SCENARIO_DIR):
        return []
    return sorted(os.path.splitext(name)[0] for name in os.listdir(SCENARIO_DIR) if name.endswith('.json'))


def resolve_scenario(name_or_path: str) -> str:
    """Return a scenario file path, accepting either a path or a bundled scenario name."""
    if os.path.isfile(name_or_path):
        return name_or_path
    bundled = os.path.join(SCENARIO_DIR, f"{name_or_path}.json")
    if os.path.isfile(bundled):
        return bundled
    raise ConfigurationError(f"Scenario not found: {name_or_path} "
                             f"(bundled: {', '.join(list_bundled_scenarios())})")


class SettingsModel:
    """Model for managing scenario settings."""

    def __init__(self, path: Optional[str] = None, data: Optional[Dict[str, Any]] = None):
        """Initialize the settings model.

        Args:
            path: Scenario file or bundled scenario name to load
            data: Scenario dictionary, merged after ``path``
        """
        self.settings = copy.deepcopy(DEFAULT_SETTINGS)
        self.source = None
        if path is not None:
            self.load_settings(path)
        if data is not None:
            self.update(data)

    def load_settings(self, path: str) -> None:
        """Load a scenario file on top of the current settings."""
        resolved = resolve_scenario(path)
        try:
            with open(resolved, 'r') as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"{resolved}: invalid JSON ({e})") from e
        if not isinstance(data, dict):
            raise ConfigurationError(f"{resolved}: scenario must be a JSON object")
        self.update(data)
        self.source = resolved
        logger.debug(f"Scenario loaded from {resolved}")

    def save_settings(self, path: str) -> None:
        """Write the effective configuration as a scenario file."""
        with open(path, 'w') as f:
            f.write(self.to_json())
            f.write('\n')
        logger.debug(f"Settings saved to {path}")

    def update(self, data: Dict[str, Any]) -> None:
        self.settings = _merge(self.settings, data)
        if self.settings['rig'].get('profile') == 'full':
            self.settings['rig']['image_size'] = list(FULL_IMAGE_SIZE)
        self.validate()

    def apply_overrides(self, seed: Optional[int] = None, speed_kmh: Optional[float] = None,
                        cycles: Optional[int] = None, disparity_ms: Optional[float] = None,
                        schedule: Optional[str] = None,
                        image_size: Optional[List[int]] = None, method: Optional[str] = None,
                        condition: Optional[str] = None, noise_sigma: Optional[float] = None) -> None:
        """Apply command-line overrides on top of the loaded scenario."""
        update: Dict[str, Any] = {}
        if seed is not None:
            update['seed'] = int(seed)
        if speed_kmh is not None:
            update.setdefault('vehicle', {})['speed_kmh'] = float(speed_kmh)
        if cycles is not None:
            update.setdefault('capture', {})['cycles'] = int(cycles)
        if disparity_ms is not None:
            update.setdefault('capture', {})['engine_temporal_disparity_s'] = float(disparity_ms) / 1000.0
        if schedule is not None:
            if schedule not in SCHEDULES:
                raise ConfigurationError(f"Unknown schedule '{schedule}'")
            cycle, preset, left, right = SCHEDULES[schedule]
            update.setdefault('capture', {}).update(
                cycle_ticks=cycle, preset_tick=preset, left_tick=left, right_tick=right)
        if image_size is not None:
            update.setdefault('rig', {}).update(image_size=[int(v) for v in image_size], profile='default')
        for key, value in (('method', method), ('condition', condition), ('noise_sigma', noise_sigma)):
            if value is not None:
                update.setdefault('run', {})[key] = value
        if update:
            self.update(update)

    def validate(self) -> None:
        """Check cross-field constraints of the merged settings.

        Raises:
            ConfigurationError: If any value is out of range
        """
        engine, vehicle, rig, capture = (self.settings[k] for k in ('engine', 'vehicle', 'rig', 'capture'))
        if not isinstance(self.settings['seed'], int) or self.settings['seed'] < 0:
            raise ConfigurationError("seed must be a non-negative integer")
        if not engine['tick_duration_s'] > 0:
            raise ConfigurationError("engine.tick_duration_s must be positive")
        if engine['leak_fraction'] < 0:
            raise ConfigurationError("engine.leak_fraction must be non-negative")
        if vehicle['speed_kmh'] < 0:
            raise ConfigurationError("vehicle.speed_kmh must be non-negative")
        for segment in vehicle['path']:
            kind = segment.get('type')
            if kind == 'straight':
                if not segment.get('length', 0) > 0:
                    raise ConfigurationError("straight segments need a positive length")
            elif kind == 'arc':
                if not segment.get('radius', 0) > 0 or segment.get('angle_deg', 0) == 0:
                    raise ConfigurationError("arc segments need a positive radius and a non-zero angle_deg")
            else:
                raise ConfigurationError(f"Unknown path segment type '{kind}'")
        if not rig['baseline_m'] > 0:
            raise ConfigurationError("rig.baseline_m must be positive")
        if not 0 < rig['near_clip_m'] < rig['far_clip_m']:
            raise ConfigurationError("rig clips must satisfy 0 < near_clip_m < far_clip_m")
        width, height = rig['image_size']
        if width <= 0 or height <= 0:
            raise ConfigurationError("rig.image_size must be positive")
        preset, left, right, cycle = (capture[k] for k in ('preset_tick', 'left_tick', 'right_tick', 'cycle_ticks'))
        if not (0 < preset < left < right <= cycle and right - left >= 2):
            raise ConfigurationError(
                f"Capture schedule needs 0 < preset < left < left+2 <= right <= cycle, "
                f"got preset={preset} left={left} right={right} cycle={cycle}")
        if capture['engine_temporal_disparity_s'] < 0:
            raise ConfigurationError("capture.engine_temporal_disparity_s must be non-negative")
        if capture['naive_extra_latency_frames'] < 0:
            raise ConfigurationError("capture.naive_extra_latency_frames must be non-negative")
        if left + 1 + capture['naive_extra_latency_frames'] > cycle:
            raise ConfigurationError("naive capture latency does not fit inside one cycle")
        if capture['depth_semantics'] not in ('ray', 'planar'):
            raise ConfigurationError("capture.depth_semantics must be 'ray' or 'planar'")
        if capture['cycles'] is not None and capture['cycles'] < 0:
            raise ConfigurationError("capture.cycles must be non-negative")
        if not self.settings['timebase']['day_duration_s'] > 0:
            raise ConfigurationError("timebase.day_duration_s must be positive")
        run = self.settings['run']
        if run['method'] not in METHOD_ALIASES and run['method'] not in METHODS:
            raise ConfigurationError(f"Unknown run.method '{run['method']}'")
        if run['condition'] not in CONDITION_ALIASES and run['condition'] not in CONDITION_PROFILES:
            raise ConfigurationError(f"Unknown run.condition '{run['condition']}'")
        if not run['noise_sigma'] >= 0:
            raise ConfigurationError("run.noise_sigma must be non-negative")

    def section(self, name: str) -> Dict[str, Any]:
        return copy.deepcopy(self.settings[name])

    @property
    def name(self) -> str:
        return self.settings['name']

    @property
    def seed(self) -> int:
        return int(self.settings['seed'])

    def to_dict(self) -> Dict[str, Any]:
        return copy.deepcopy(self.settings)

    def to_json(self) -> str:
        """Effective configuration block; feeding it back as a scenario reproduces the run."""
        return json.dumps(self.settings, indent=2, sort_keys=True)
