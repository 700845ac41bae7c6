"""Time/frequency conversion and windowing shared by every other module."""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .constants import HOP_SIZE, WINDOW_SIZE
from .errors import ConfigurationError, DimensionError

COLA_TOLERANCE = 1e-6


@dataclass(eq=False)
class Waveform:
    """Mono time-domain audio."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 1:
            raise DimensionError(f"Waveform samples must be 1-D, got shape {self.samples.shape}")
        if not np.issubdtype(self.samples.dtype, np.floating):
            self.samples = self.samples.astype(np.float64)
        if int(self.sample_rate) <= 0:
            raise ConfigurationError(f"sample_rate must be positive, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)
        if not np.all(np.isfinite(self.samples)):
            raise DimensionError("Waveform contains NaN or Inf samples")

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self):
        """Length in seconds."""
        return len(self.samples) / self.sample_rate

    def energy(self):
        """Sum of squared samples."""
        return float(np.sum(np.asarray(self.samples, dtype=np.float64) ** 2))


@dataclass(eq=False)
class MultiChannelWaveform:
    """Equal-length, equal-rate channels; index 0 is microphone 1."""

    channels: tuple

    def __post_init__(self):
        self.channels = tuple(self.channels)
        if not self.channels:
            raise DimensionError("MultiChannelWaveform needs at least one channel")
        rates = {ch.sample_rate for ch in self.channels}
        if len(rates) != 1:
            raise DimensionError(f"Channels disagree on sample rate: {sorted(rates)}")
        lengths = {len(ch) for ch in self.channels}
        if len(lengths) != 1:
            raise DimensionError(f"Channels disagree on length: {sorted(lengths)}")

    @classmethod
    def from_array(cls, data, sample_rate):
        """Build from a ``[channels, samples]`` array."""
        data = np.asarray(data)
        if data.ndim != 2:
            raise DimensionError(f"Expected [channels, samples], got shape {data.shape}")
        return cls(tuple(Waveform(row, sample_rate) for row in data))

    @property
    def sample_rate(self):
        """Common rate of the channels."""
        return self.channels[0].sample_rate

    @property
    def num_channels(self):
        """Number of channels."""
        return len(self.channels)

    def __len__(self):
        return len(self.channels[0])

    def as_array(self):
        """Return the ``[channels, samples]`` array."""
        return np.stack([ch.samples for ch in self.channels])

    def require_stereo(self):
        """Raise unless this is a two-microphone recording."""
        if self.num_channels != 2:
            raise DimensionError(f"Enhancement needs exactly 2 channels, got {self.num_channels}")
        return self


def make_hann(window_size):
    """Periodic Hann window, COLA-compliant at 50% overlap."""
    if int(window_size) != window_size or window_size < 2 or window_size % 2:
        raise ConfigurationError(f"Hann window size must be an even integer >= 2, got {window_size}")
    n = np.arange(window_size)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / window_size)


@dataclass(eq=False)
class StftConfig:
    """Frame size, hop and analysis window."""

    window_size: int = WINDOW_SIZE
    hop_size: int = HOP_SIZE
    window: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.window_size < 2 or self.window_size % 2:
            raise ConfigurationError(f"window_size must be even and >= 2, got {self.window_size}")
        if not 1 <= self.hop_size <= self.window_size:
            raise ConfigurationError(f"hop_size must lie in [1, {self.window_size}], got {self.hop_size}")
        if self.window is None:
            self.window = make_hann(self.window_size)
        self.window = np.asarray(self.window, dtype=np.float64)
        if self.window.shape != (self.window_size,):
            raise ConfigurationError(f"window has {self.window.size} coefficients, expected {self.window_size}")

    @classmethod
    def rectangular(cls, window_size, hop_size=None):
        """Rectangular window; COLA only at hop = window_size / k."""
        return cls(window_size, hop_size or window_size, np.ones(window_size))

    @property
    def num_bins(self):
        """Non-negative frequency bins per frame."""
        return self.window_size // 2 + 1

    def cola_constant(self):
        """Return the overlap-added window level, or ``None`` when it is not constant."""
        envelope = np.zeros(self.hop_size)
        for start in range(0, self.window_size, self.hop_size):
            chunk = self.window[start : start + self.hop_size]
            envelope[: len(chunk)] += chunk
        level = float(np.mean(envelope))
        if level <= 0 or np.max(np.abs(envelope - level)) > COLA_TOLERANCE * level:
            return None
        return level

    def is_cola(self):
        """Whether the window overlap-adds to a constant at this hop."""
        return self.cola_constant() is not None

    def num_frames(self, length):
        """Frames needed to cover ``length`` samples, tail zero-padded."""
        if length < self.window_size:
            raise DimensionError(f"Signal of {length} samples is shorter than the {self.window_size}-sample window")
        return 1 + -(-(length - self.window_size) // self.hop_size)

    def padded_length(self, length):
        """Length after zero-padding the last frame."""
        return (self.num_frames(length) - 1) * self.hop_size + self.window_size


@dataclass(eq=False)
class ComplexSpectrogram:
    """STFT bins ``[window_size/2 + 1, frames]`` plus what is needed to invert them."""

    bins: np.ndarray
    config: StftConfig
    sample_rate: int
    length: int

    def __post_init__(self):
        self.bins = np.asarray(self.bins)
        if self.bins.ndim != 2 or self.bins.shape[0] != self.config.num_bins:
            raise DimensionError(f"Spectrogram shape {self.bins.shape} does not have {self.config.num_bins} bins")
        if not np.all(np.isfinite(self.bins)):
            raise DimensionError("Spectrogram contains NaN or Inf bins")

    @property
    def shape(self):
        """``(bins, frames)``."""
        return self.bins.shape

    @property
    def num_frames(self):
        """Number of frames."""
        return self.bins.shape[1]

    def with_bins(self, bins):
        """Same framing, new content."""
        return ComplexSpectrogram(bins, self.config, self.sample_rate, self.length)


def frame_signal(x, window_size, hop_size):
    """Split ``[..., padded_length]`` into overlapping ``[..., frames, window_size]`` views."""
    return sliding_window_view(x, window_size, axis=-1)[..., ::hop_size, :]


def pad_to_frames(x, cfg):
    """Zero-pad the last axis so the final frame is complete."""
    length = x.shape[-1]
    extra = cfg.padded_length(length) - length
    if extra == 0:
        return x
    pad = [(0, 0)] * (x.ndim - 1) + [(0, extra)]
    return np.pad(x, pad)


def overlap_add(frames, hop_size):
    """Overlap-add ``[..., frames, window_size]`` into ``[..., (frames-1)*hop + window_size]``."""
    n_frames, window_size = frames.shape[-2:]
    out = np.zeros(frames.shape[:-2] + ((n_frames - 1) * hop_size + window_size,), dtype=frames.dtype)
    for t in range(n_frames):
        out[..., t * hop_size : t * hop_size + window_size] += frames[..., t, :]
    return out


def stft(w, cfg=None):
    """Short-time Fourier transform of a mono waveform.

    Frame ``t`` is the DFT of the windowed segment starting at ``t * hop``; the tail is
    zero-padded so that every sample is covered and ``istft`` can restore the length.
    """
    cfg = cfg or StftConfig()
    x = np.asarray(w.samples, dtype=np.float64)
    frames = frame_signal(pad_to_frames(x, cfg), cfg.window_size, cfg.hop_size) * cfg.window
    bins = np.fft.rfft(frames, axis=-1).T
    return ComplexSpectrogram(bins, cfg, w.sample_rate, len(x))


def istft(spec):
    """Overlap-add inverse of :func:`stft`; requires a COLA window."""
    cfg = spec.config
    level = cfg.cola_constant()
    if level is None:
        raise ConfigurationError(
            f"Window is not constant-overlap-add at hop {cfg.hop_size}; cannot invert the spectrogram"
        )
    frames = np.fft.irfft(spec.bins.T, n=cfg.window_size, axis=-1)
    samples = overlap_add(frames, cfg.hop_size)[: spec.length] / level
    return Waveform(samples, spec.sample_rate)
