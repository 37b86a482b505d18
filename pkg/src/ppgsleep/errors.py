"""Exception types shared across the package."""


class PpgSleepError(Exception):
    """Base class for all errors raised by this package."""


class InvalidSpecError(PpgSleepError):
    """A filter / model / super-window specification violates its invariants."""


class ShapeError(PpgSleepError):
    """Tensor operands have incompatible shapes."""


class ModelWiringError(InvalidSpecError):
    """The requested residual wiring cannot be assembled (summands differ in shape)."""


class FlatSignalError(PpgSleepError):
    """Recording has (near-)zero variance after clipping; cannot be normalized."""


class EmptyGridError(PpgSleepError):
    """Recording is too short to yield a single complete 30 s window."""


class UnsupportedRateError(PpgSleepError):
    """Source sample rate below the target grid rate (upsampling unsupported)."""


class EmptyBatchError(PpgSleepError):
    """No valid positions in a batch; the masked loss is undefined."""


class EmptyEvalError(PpgSleepError):
    """No valid positions (or an all-zero confusion matrix) to score."""


class ConsistencyError(PpgSleepError):
    """Optimizer state and gradients disagree (missing or misshaped entries)."""


class UsageError(PpgSleepError):
    """Invalid command-line invocation; maps to exit code 2."""


class ContainerError(PpgSleepError):
    """Base class for on-disk container problems."""


class BadMagicError(ContainerError):
    """File does not start with the expected magic bytes."""


class UnsupportedVersionError(ContainerError):
    """Container version is newer than this reader understands."""


class TruncatedFileError(ContainerError):
    """File ended before the declared payload was read."""


class SpecMismatchError(ContainerError):
    """Checkpoint was produced under a different model specification."""
