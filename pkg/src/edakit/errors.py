"""Exception types shared across the package."""


class EdakitError(Exception):
    """Base class for all package errors."""


class ShapeError(EdakitError):
    """Tensor or signal dimensions do not satisfy an operation's contract."""


class ConfigError(EdakitError):
    """A configuration value is invalid or inconsistent."""


class TrainingDiverged(EdakitError):
    """A loss or gradient became non-finite during training."""

    def __init__(self, message, epoch=None, step=None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step


class InferenceError(EdakitError):
    """Model inference produced a non-finite output."""
