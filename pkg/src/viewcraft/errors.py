"""Exception types shared across the package."""


class ViewcraftError(Exception):
    """Base class for all viewcraft errors."""


class DegenerateNorm(ViewcraftError):
    """Perturbation norm is numerically zero; the generator output is dead."""


class ShapeMismatch(ViewcraftError):
    """Tensor shapes are incompatible with the requested operation."""


class ConfigInvalid(ViewcraftError):
    """A configuration object violates its invariants."""


class ConfigParseError(ViewcraftError):
    """A config file could not be parsed or validated."""


class NotNormalized(ViewcraftError):
    """Embedding rows deviate from unit norm beyond tolerance."""


class IndexOutOfRange(ViewcraftError):
    """An example index does not address a valid memory bank slot."""


class EmptyInput(ViewcraftError):
    """An input sequence is empty."""


class MaskTooLarge(ViewcraftError):
    """Requested mask width exceeds the spectrogram extent."""


class WindowOutOfBounds(ViewcraftError):
    """A requested window does not fit inside the recording."""


class DatasetTooSmall(ViewcraftError):
    """Not enough examples for the requested construction."""


class ZeroVariance(ViewcraftError):
    """A channel has zero variance; normalization stats are undefined."""


class NonFiniteLoss(ViewcraftError):
    """The training loss became NaN or Inf."""


class CheckpointMismatch(ViewcraftError):
    """A checkpoint is incompatible with the requested computation."""


class KTooLarge(ViewcraftError):
    """Top-k requested with k exceeding the number of classes."""


class UnknownSubject(ViewcraftError):
    """A subject id is absent from the dataset (or the labeled split is empty)."""


class IOFailure(ViewcraftError):
    """A required artifact could not be read or written."""
