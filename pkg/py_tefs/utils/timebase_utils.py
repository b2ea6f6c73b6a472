"""
In-game to real-world time conversion.

Timestamps are always logged in in-game seconds; real seconds and the effective
camera frequency are derived from them through the game-day model, never the
reverse.
"""

from dataclasses import dataclass

from py_tefs.utils.errors import ConfigurationError

SECONDS_PER_DAY = 86400.0
DEFAULT_DAY_DURATION_S = 2880.0
DEFAULT_PAIR_SPACING_S = 2.5


@dataclass(frozen=True)
class GameDayModel:
    """Real seconds per in-game day and in-game seconds between stereo pairs."""

    day_duration_s: float = DEFAULT_DAY_DURATION_S
    pair_spacing_s: float = DEFAULT_PAIR_SPACING_S

    def __post_init__(self):
        _check_positive(self.pair_spacing_s, self.day_duration_s)

    def real_spacing(self) -> float:
        return game_to_real(self.pair_spacing_s, self.day_duration_s)

    def camera_frequency(self) -> float:
        return cam_freq(self.pair_spacing_s, self.day_duration_s)


def _check_positive(game_seconds: float, day_duration_s: float) -> None:
    if not game_seconds > 0:
        raise ConfigurationError(f"In-game interval must be positive, got {game_seconds}")
    if not day_duration_s > 0:
        raise ConfigurationError(f"Day duration must be positive, got {day_duration_s}")


def game_to_real(game_seconds: float, day_duration_s: float = DEFAULT_DAY_DURATION_S) -> float:
    """Real-world seconds corresponding to ``game_seconds`` of in-game time."""
    _check_positive(game_seconds, day_duration_s)
    return game_seconds * day_duration_s / SECONDS_PER_DAY


def cam_freq(game_seconds: float, day_duration_s: float = DEFAULT_DAY_DURATION_S) -> float:
    """Effective camera frequency (Hz) for pairs spaced ``game_seconds`` apart in-game.

    Computed as 86400 / (T_g · D_r) so that (2.5 s, 2880 s) gives exactly 12 fps.
    """
    _check_positive(game_seconds, day_duration_s)
    return SECONDS_PER_DAY / (game_seconds * day_duration_s)
