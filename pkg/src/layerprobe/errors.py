"""Exception hierarchy for the layerprobe package."""


class LayerProbeError(Exception):
    """Base class for every error this package raises deliberately."""


# manifest and audio


class MissingFile(LayerProbeError):
    """A referenced file does not exist."""


class MalformedDocument(LayerProbeError):
    """A structured text document failed to parse or violates its schema."""


class IntegrityViolation(LayerProbeError):
    """A manifest's uniqueness or referential invariants are broken."""


class DecodeError(LayerProbeError):
    """An audio file exists but could not be decoded."""


class ResampleError(LayerProbeError):
    """Resampling failed or was requested with an invalid target rate."""


# fold construction


class TooFewSpeakers(LayerProbeError):
    """Fewer speakers than requested folds."""


class UnknownSpeaker(LayerProbeError):
    """A fold references a speaker the manifest does not contain."""


# embedding extraction and cache


class WaveformTooShort(LayerProbeError):
    """Input waveform is shorter than the adapter's receptive field."""


class AdapterFailure(LayerProbeError):
    """The model adapter raised or broke its output contract."""


class AdapterResolutionError(LayerProbeError):
    """An adapter spec string could not be resolved to an adapter."""


class EmptyTemporalAxis(LayerProbeError):
    """Pooling requested over zero temporal frames."""


class CacheCorrupt(LayerProbeError):
    """A binary cache or model file failed magic, size, or checksum checks."""


class NotCached(LayerProbeError):
    """Requested embedding is not present in the cache."""


# pretraining objective


class DomainError(LayerProbeError):
    """Argument outside the mathematical domain of the operation."""


class NonFiniteInput(LayerProbeError):
    """An input contains NaN or infinity."""


class ZeroVector(LayerProbeError):
    """Cosine similarity is undefined for a zero-norm vector."""


class InvalidDistribution(LayerProbeError):
    """Rows must be nonnegative and sum to one."""


# probe training


class EmptySet(LayerProbeError):
    """Training or validation set is empty."""


class SingleClassTrainingSet(LayerProbeError):
    """Training set must contain both classes."""


class NonFiniteLoss(LayerProbeError):
    """Optimization diverged to a non-finite loss or parameters."""


class DimensionMismatch(LayerProbeError):
    """Input dimension does not match the probe's parameters."""


# evaluation and reporting


class EmptyGroup(LayerProbeError):
    """Soft voting requires at least one prediction record."""


class MixedSpeaker(LayerProbeError):
    """Records in a voting group must share speaker, layer, and model."""


class EmptyInput(LayerProbeError):
    """Accuracy is undefined for an empty list of votes."""


class EmptyTable(LayerProbeError):
    """Plot rendering requires a non-empty table."""


class WriteError(LayerProbeError):
    """An output file could not be written."""


# synthetic corpus and configuration


class InvalidParams(LayerProbeError):
    """Synthetic corpus parameters are out of range."""


class ConfigError(LayerProbeError):
    """Experiment configuration is missing or has invalid fields."""
