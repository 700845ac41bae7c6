"""Exception hierarchy for the CDUNet toolkit."""


class CdunetError(Exception):
    """Base class for every error raised by the toolkit."""


class ConfigurationError(CdunetError, ValueError):
    """Invalid configuration value (window, hop, angles, model or loss settings)."""


class DimensionError(CdunetError, ValueError):
    """Shapes or lengths that do not fit together."""


class GeometryError(CdunetError, ValueError):
    """Source or microphone placed outside the room."""


class AudioFormatError(CdunetError, ValueError):
    """Unsupported WAV encoding, wrong channel count or mismatched sample rate."""


class SilentSignalError(CdunetError, ValueError):
    """A signal that must carry energy is all zeros."""


class WeightsFormatError(CdunetError, ValueError):
    """Malformed or mismatched weights file."""


class UnsupportedVersionError(WeightsFormatError):
    """Weights file written with a format version this build cannot read."""


class InferenceError(CdunetError, RuntimeError):
    """Non-finite activations during a forward pass."""


class TrainingDivergedError(CdunetError, RuntimeError):
    """Loss became NaN on two consecutive steps."""
