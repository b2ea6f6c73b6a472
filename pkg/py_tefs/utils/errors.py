"""
Exception types raised by the Py-TeFS library.

Library code raises these; only the command-line front end turns them into
log lines and exit codes.
"""

from typing import Optional


class TefsError(Exception):
    """Base class for every error raised by Py-TeFS."""


class ConfigurationError(TefsError, ValueError):
    """Invalid scenario, rig or profile parameters."""


class ProtocolViolationError(TefsError):
    """A capture command was issued in a state the protocol forbids."""

    def __init__(self, message: str, phase: Optional[str] = None):
        self.phase = phase
        self.detail = message
        if phase is not None:
            message = f"{message} (phase: {phase})"
        super().__init__(message)

    def in_phase(self, phase: str) -> "ProtocolViolationError":
        """Same error attributed to ``phase``."""
        return type(self)(self.detail, phase=phase)


class SwapRejectedError(ProtocolViolationError):
    """Camera swap requested while the engine is natively paused."""


class DepthRangeError(TefsError, ValueError):
    """Depth value outside the range a conversion profile can represent."""


class DegenerateConfigurationError(TefsError):
    """Too few or collinear points for a least-squares alignment."""


class DatasetFormatError(TefsError):
    """A dataset file does not follow the documented layout."""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{location}{message}")


class AssociationError(TefsError):
    """Two trajectories share no associable poses."""


class StereoGeometryError(TefsError):
    """Stereo observation with non-positive disparity."""


class TrajectoryError(TefsError, ValueError):
    """Trajectory too short or malformed for the requested operation."""
