"""Exception types shared across the package.

Every error raised on a contract violation derives from PmadnetError so
callers (and the CLI) can distinguish package failures from bugs.
"""


class PmadnetError(Exception):
    """Base class for all package-specific errors."""


class ShapeMismatch(PmadnetError):
    """Operands have incompatible shapes for the requested operation."""


class NotScalarLoss(PmadnetError):
    """backward() was called on a tensor that is not a single scalar."""


class DetachedTensor(PmadnetError):
    """backward() was called on a tensor with no recorded computation."""


class MissingGradient(PmadnetError):
    """An optimizer step found a parameter whose gradient was never set."""


class NonFiniteValue(PmadnetError):
    """A NaN or infinity appeared where a finite value is required."""


class InvalidGamma(PmadnetError):
    """A focusing or gamma-correction exponent is out of range."""


class WindowTooLarge(PmadnetError):
    """A pooling or filter window does not fit inside its input."""


class UnknownLayer(PmadnetError):
    """A layer name does not exist in the model being inspected."""


class MissingMask(PmadnetError):
    """A dataset image that requires a mask has none on disk."""


class UnreadableImage(PmadnetError):
    """An image file exists but cannot be decoded."""


class DegenerateCrop(PmadnetError):
    """An augmentation crop collapsed to zero area."""


class InvalidFractions(PmadnetError):
    """Split fractions are negative or do not sum to 1."""


class EmptyClass(PmadnetError):
    """Class balancing found a label with no samples to augment from."""


class EmptyMatrix(PmadnetError):
    """A confusion matrix with zero recorded instances was summarized."""


class CheckpointError(PmadnetError):
    """A checkpoint file cannot be used."""


class CorruptCheckpoint(CheckpointError):
    """A checkpoint file is malformed, truncated, or fails its checksum."""


class VersionMismatch(CheckpointError):
    """A checkpoint was written by an incompatible format version."""


class IOFailure(PmadnetError):
    """A file could not be written or read back."""


class ConfigError(PmadnetError):
    """A configuration value or key is invalid."""
