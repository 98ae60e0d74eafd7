"""Exception types shared across the project and their CLI exit codes."""

from typing import Optional


class DigNetError(Exception):
    """Base class for all project errors."""


class ValidationError(DigNetError):
    """Input data violates a documented invariant."""


class UndefinedMetricError(ValidationError):
    """A metric has no defined value for the given records (e.g. none at all)."""


class LoadError(DigNetError):
    """A referenced file is missing or unreadable."""


class ConfigurationError(DigNetError):
    """Configuration is invalid or a requested adapter is unavailable."""


class GenerationError(DigNetError):
    """The synthetic generator cannot render the requested scene."""


class ShapeError(DigNetError):
    """Tensor dimensions do not line up."""


class NumericError(DigNetError):
    """Non-finite values appeared; `stage` names where."""

    def __init__(self, message: str, stage: Optional[str] = None):
        super().__init__(f"{stage}: {message}" if stage else message)
        self.stage = stage


class CheckpointError(DigNetError):
    """Checkpoint format, version or config echo does not match."""


class TrainingDivergedError(NumericError):
    """Loss became non-finite; the last good checkpoint is kept."""

    def __init__(self, message: str, checkpoint_path: Optional[str] = None):
        super().__init__(message, stage="train")
        self.checkpoint_path = checkpoint_path


EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (ValidationError, ConfigurationError, LoadError, CheckpointError)):
        return EXIT_VALIDATION
    return EXIT_RUNTIME
