from typing import Optional


class CTOSegError(Exception):
    """Base exception for cto-seg errors."""


class ConfigurationError(CTOSegError):
    """Raised when configuration is invalid."""


class ShapeError(CTOSegError, ValueError):
    """Raised when a tensor violates a shape contract."""


class HeadCountError(ShapeError):
    """Raised when a loss receives an unexpected set of prediction heads."""


class DataError(CTOSegError):
    """Base class for dataset ingestion errors."""


class MissingPairError(DataError):
    """Raised when an image has no mask (or a mask has no image)."""

    def __init__(self, stem: str, missing: str):
        self.stem = stem
        self.missing = missing
        super().__init__(f"Missing {missing} for pair '{stem}'")


class UnreadableFileError(DataError):
    """Raised when an image or mask file cannot be decoded."""

    def __init__(self, path: str, reason: str = ""):
        self.path = path
        super().__init__(f"Unreadable file {path}" + (f": {reason}" if reason else ""))


class SizeMismatchError(DataError):
    """Raised when an image and its mask disagree in size."""

    def __init__(self, stem: str, image_size: tuple, mask_size: tuple):
        self.stem = stem
        super().__init__(
            f"Image and mask sizes differ for '{stem}': {image_size} vs {mask_size}"
        )


class EmptyDatasetError(DataError):
    """Raised when a dataset split has no samples."""


class MetricError(CTOSegError):
    """Raised when a metric computation breaks one of its own invariants."""


class UndefinedMetricError(MetricError):
    """Raised when a metric is undefined for its inputs (e.g. empty point sets)."""


class NonFiniteLossError(CTOSegError):
    """Raised when a loss component becomes NaN or infinite."""

    def __init__(self, component: str, value: float, step: Optional[int] = None):
        self.component = component
        self.value = value
        self.step = step
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"Non-finite loss component '{component}' = {value}{where}")


class CheckpointError(CTOSegError):
    """Raised when a checkpoint is missing or cannot be interpreted."""
