"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """Bad shapes, ranges or configuration values passed to a library call."""


class ManifestError(ValueError):
    """A dataset manifest could not be parsed."""


class DecodeError(OSError):
    """An image file could not be decoded."""


class CheckpointError(ValueError):
    """A checkpoint file is truncated, corrupt or incompatible."""


class UndefinedMetricError(ValueError):
    """A metric cannot be computed for the given labels (e.g. only one class)."""


class TrainingError(RuntimeError):
    """Training diverged or could not proceed."""
