"""Exception hierarchy.

Every error raised by this package derives from :class:`CTClustError` so
callers can catch one type. The CLI maps subtrees to exit codes: config
problems exit 2, data problems exit 3, runtime failures exit 4.
"""


class CTClustError(Exception):
    """Base class for all package errors."""


# --- configuration / user input -------------------------------------------

class ConfigError(CTClustError):
    """Invalid configuration file or option combination."""


class UnknownPreset(ConfigError):
    """Requested simulation preset name does not exist."""


# --- data ------------------------------------------------------------------

class ConfigParse(ConfigError):
    """Configuration file could not be parsed."""


class DataError(CTClustError):
    """Malformed or inconsistent input data."""


class DataParse(DataError):
    """Data file could not be parsed; message carries the row number."""


class NonMonotoneTimes(DataError):
    """Observation times for a subject are not strictly increasing."""


class NegativeCount(DataError):
    """Count outcome is negative or non-integral."""


class MisalignedInputs(DataError):
    """Parallel input arrays differ in length."""


class EmptyDataset(DataError):
    """No subjects found in the input."""


# --- numerical / model inputs ----------------------------------------------

class NonSquare(CTClustError):
    """Matrix argument is not square."""


class DimensionTooSmall(CTClustError):
    """State space must have at least two states."""


class NegativeRate(CTClustError):
    """Off-diagonal generator entry is negative."""


class NonFiniteInput(CTClustError):
    """Input contains NaN or infinity."""


class EigenFailure(CTClustError):
    """Eigendecomposition of a generator did not converge."""


class ImpossibleEndpoint(CTClustError):
    """Endpoint pair has zero probability under the generator and gap."""


class ZeroRateWithJump(CTClustError):
    """Path statistics record a jump through a zero-rate channel."""


class ZeroLikelihood(CTClustError):
    """Observation sequence has zero likelihood under the model."""


class SamplerExhausted(CTClustError):
    """Rejection sampling hit its attempt cap (fallback also failed)."""


class EmptySamples(CTClustError):
    """No posterior samples available for the requested summary."""


class EmptyTrace(CTClustError):
    """Scalar trace is empty."""


class ConstantSeries(CTClustError):
    """Scalar trace has zero variance, autocorrelation undefined."""


class DimensionMismatch(CTClustError):
    """Array shapes are inconsistent for the requested operation."""


class LengthMismatch(CTClustError):
    """Sequences that must align have different lengths."""


class CheckpointIOFailure(CTClustError):
    """Checkpoint file is unreadable, corrupt, or of an unknown version."""


class IOFailure(CTClustError):
    """Could not read or write an output artifact."""
