import pytest

from py_tefs.models.engine_model import (BEACON, GROUND, EngineClock, PathSegment, Scene, SceneObject,
                                         VehiclePath, World)
from py_tefs.models.settings_model import SettingsModel


@pytest.fixture
def make_settings():
    """Factory for the small bundled test scene with optional overrides."""

    def factory(scenario='test_scene', data=None, **overrides):
        settings = SettingsModel(scenario, data=data)
        overrides.setdefault('image_size', [64, 36])
        settings.apply_overrides(**overrides)
        return settings

    return factory


@pytest.fixture
def beacon_world():
    """Vehicle parked at the origin facing +x with one beacon 10 m ahead of the left camera."""
    beacon = SceneObject(0, BEACON, (11.5, 0.0, 1.4), (0.4, 0.4, 0.4), (240, 110, 100))
    ground = SceneObject(1, GROUND, (20.0, 0.0, 0.0), (60.0, 60.0, 0.0), (104, 112, 104))
    path = VehiclePath(speed_mps=0.0, duration_s=100.0)
    return World(clock=EngineClock(), path=path, scene=Scene((beacon, ground)))


@pytest.fixture
def straight_world():
    """Empty scene, 10 m/s straight along +x for 100 m."""
    path = VehiclePath(speed_mps=10.0, segments=(PathSegment(100.0),))
    return World(clock=EngineClock(swap_residual=0.0005), path=path)

