"""Models package for the Py-TeFS toolkit."""

from py_tefs.models.settings_model import SettingsModel
from py_tefs.models.engine_model import World, build_world
from py_tefs.models.render_model import CameraRig, FrameBuffer, RenderModel
from py_tefs.models.sample_model import FeatureObservation, StereoSample
from py_tefs.models.analysis_model import MetricReport, Trajectory
