"""Exception types shared across the package."""


class DandelionError(Exception):
    """Base class for all package-specific errors."""


class DegenerateVectorError(DandelionError):
    """A vector or centroid whose norm is below the guard epsilon."""


class GradientContractError(DandelionError):
    """backward() was asked to differentiate something that is not a scalar."""


class DimensionMismatchError(DandelionError):
    """Matrix shapes do not line up with the declared model dimensions."""


class EmptyCategoryError(DandelionError):
    """A category that must contain at least one instance is empty."""


class RejectionBudgetError(DandelionError):
    """Unknown-instance rejection sampling exhausted its attempt budget."""


class SchemaError(DandelionError):
    """A dataset schema is missing, malformed, or inconsistent with the CSV."""


class CsvParseError(DandelionError):
    """A CSV cell could not be parsed; message names the row and column."""


class CheckpointError(DandelionError):
    """A checkpoint file is unreadable, truncated, or version-incompatible."""


class ConfigError(DandelionError):
    """A run configuration is invalid (CLI exit code 2)."""


class TrainingAborted(DandelionError):
    """Training stopped because a loss became non-finite."""

    def __init__(self, epoch: int, message: str):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch
