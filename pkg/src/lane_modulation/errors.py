"""
Exception family for lane-modulation.

Every error raised on purpose by the library derives from LaneModulationError,
so callers (CLI, tool server) can map them onto exit codes or error payloads.
"""

from typing import Optional


class LaneModulationError(Exception):
    """Base class for all library errors."""


class InvalidArgumentError(LaneModulationError, ValueError):
    """A precondition on an argument does not hold."""


class DegenerateLaneError(InvalidArgumentError):
    """Start and end of a lane coincide, so its straightness ratio is undefined."""

    def __init__(self, message: str, index: Optional[int] = None):
        self.index = index
        if index is not None:
            message = f"proposal {index}: {message}"
        super().__init__(message)


class EvaluationError(LaneModulationError):
    """A checked function returned a non-finite value."""

    def __init__(self, message: str, index: Optional[int] = None):
        self.index = index
        if index is not None:
            message = f"coordinate {index}: {message}"
        super().__init__(message)


class UndefinedStatisticError(LaneModulationError):
    """A statistic has no value for the given input (e.g. no ground truth)."""


class ConfigError(InvalidArgumentError):
    """A configuration field is missing, unknown or out of range."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
