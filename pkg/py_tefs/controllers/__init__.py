"""Controllers package for the Py-TeFS toolkit."""

from .capture_controller import CaptureController
from .validation_controller import ValidationController
