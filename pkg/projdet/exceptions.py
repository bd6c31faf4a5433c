"""Custom exceptions for projdet."""


class ProjdetError(Exception):
    """Base exception for all projdet errors."""
    pass


class ShapeError(ProjdetError):
    """Raised when array shapes or counts do not agree."""
    pass


class NonFiniteError(ProjdetError):
    """Raised when an input that must be finite contains NaN or inf."""
    pass


class GeometryError(ProjdetError):
    """Raised for invalid poses or camera parameters."""
    pass


class GradCheckError(ProjdetError):
    """Raised when an operation cannot be gradient-checked."""
    pass


class TimestampOrderError(ProjdetError):
    """Raised when a frame is pushed out of time order."""

    def __init__(self, message, timestamp=None, newest=None):
        self.timestamp = timestamp
        self.newest = newest
        super().__init__(message)


class TrainingDivergedError(ProjdetError):
    """Raised when the training loss becomes non-finite."""

    def __init__(self, message, step=None, components=None):
        self.step = step
        self.components = components or {}
        super().__init__(message)


class ConfigError(ProjdetError):
    """Raised for unknown presets, unknown keys or bad overrides."""
    pass


class CheckpointError(ProjdetError):
    """Raised when a checkpoint or tensor file cannot be read back."""
    pass
