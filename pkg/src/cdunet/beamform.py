"""Far-field steering, delay-and-sum and GSC beamformers, and the triple-steering beams."""

from dataclasses import dataclass

import numpy as np
from loguru import logger

from .constants import DEFAULT_SAMPLE_RATE, SPEED_OF_SOUND
from .errors import ConfigurationError, DimensionError
from .signal_core import StftConfig

NLMS_MU = 0.1
NLMS_EPS = 1e-6


@dataclass(frozen=True, eq=False)
class SteeringVector:
    """Per-bin phase weights ``[bins, 2]``; microphone 1 is the phase reference."""

    weights: np.ndarray
    azimuth: float
    geometry: object


@dataclass(frozen=True)
class SteeringSet:
    """Steering vectors at the target angle and at the two edge angles."""

    lower: SteeringVector
    center: SteeringVector
    upper: SteeringVector

    def __post_init__(self):
        if not self.lower.azimuth <= self.center.azimuth <= self.upper.azimuth:
            raise ConfigurationError(
                f"Edge angles out of order: {self.lower.azimuth}, {self.center.azimuth}, {self.upper.azimuth}"
            )

    @property
    def azimuths(self):
        """Lower, centre and upper steering azimuths."""
        return (self.lower.azimuth, self.center.azimuth, self.upper.azimuth)

    def __iter__(self):
        return iter((self.lower, self.center, self.upper))


def check_azimuth(azimuth, name="angle"):
    """Return ``azimuth`` as a float, or raise when it leaves [0, 180] degrees."""
    if not 0.0 <= azimuth <= 180.0:
        raise ConfigurationError(f"{name} must lie in [0, 180] degrees, got {azimuth}")
    return float(azimuth)


def steering_delay(azimuth, geometry):
    """Seconds by which microphone 2 lags microphone 1 for a far-field source."""
    return geometry.spacing * np.cos(np.deg2rad(azimuth)) / SPEED_OF_SOUND


def steering_vector(azimuth, geometry, cfg=None, sample_rate=DEFAULT_SAMPLE_RATE):
    """Phase weights aligning microphone 2 onto microphone 1 for a source at ``azimuth``."""
    check_azimuth(azimuth, "azimuth")
    cfg = cfg or StftConfig()
    freqs = np.arange(cfg.num_bins) * sample_rate / cfg.window_size
    tau = steering_delay(azimuth, geometry)
    weights = np.stack([np.ones(cfg.num_bins, dtype=np.complex128), np.exp(-2j * np.pi * freqs * tau)], axis=1)
    return SteeringVector(weights, float(azimuth), geometry)


def steering_set(target_angle, width, geometry, cfg=None, sample_rate=DEFAULT_SAMPLE_RATE):
    """Steering at ``target_angle`` and ``target_angle -/+ width``, edges clamped to [0, 180]."""
    check_azimuth(target_angle, "target angle")
    if width < 0:
        raise ConfigurationError(f"width must be >= 0, got {width}")
    lower = max(0.0, target_angle - width)
    upper = min(180.0, target_angle + width)
    return SteeringSet(
        steering_vector(lower, geometry, cfg, sample_rate),
        steering_vector(target_angle, geometry, cfg, sample_rate),
        steering_vector(upper, geometry, cfg, sample_rate),
    )


def _aligned(spec2ch, sv):
    first, second = spec2ch
    if first.shape != second.shape:
        raise DimensionError(f"Channel spectrograms differ in shape: {first.shape} vs {second.shape}")
    if sv.weights.shape[0] != first.shape[0]:
        raise DimensionError(f"Steering vector has {sv.weights.shape[0]} bins, spectrogram has {first.shape[0]}")
    w = np.conj(sv.weights)
    return w[:, 0:1] * first.bins, w[:, 1:2] * second.bins


def das_beamform(spec2ch, sv):
    """Delay-and-sum: align both channels to ``sv`` and average."""
    a1, a2 = _aligned(spec2ch, sv)
    return spec2ch[0].with_bins(0.5 * (a1 + a2))


class GscBeamformer:
    """Generalized sidelobe canceller with a one-tap complex NLMS filter per bin.

    The fixed branch is delay-and-sum; the blocking branch is half the difference of
    the aligned channels. Frame ``t`` is filtered with the weights learnt from frames
    before ``t``. One instance serves one stream.
    """

    def __init__(self, sv, mu=NLMS_MU, eps=NLMS_EPS):
        if not 0.0 <= mu <= 1.0:
            raise ConfigurationError(f"NLMS step size must lie in [0, 1], got {mu}")
        self.sv = sv
        self.mu = mu
        self.eps = eps
        self.resets = 0
        self.filter = np.zeros(sv.weights.shape[0], dtype=np.complex128)

    def reset(self):
        """Zero the adaptive filter."""
        self.filter[:] = 0.0

    def process_frame(self, x1, x2):
        """Return one output frame from one frame of each channel (``[bins]`` complex)."""
        w = np.conj(self.sv.weights)
        a1 = w[:, 0] * x1
        a2 = w[:, 1] * x2
        fixed = 0.5 * (a1 + a2)
        blocked = 0.5 * (a1 - a2)
        out = fixed - self.filter * blocked
        if self.mu > 0:
            self.filter = self.filter + self.mu * out * np.conj(blocked) / (np.abs(blocked) ** 2 + self.eps)
            if not np.all(np.isfinite(self.filter)):
                logger.warning("GSC filter became non-finite; resetting")
                self.resets += 1
                self.filter = np.zeros_like(self.filter)
        return out

    def process(self, spec2ch):
        """Run both channel spectrograms frame by frame; returns the GSC output spectrogram."""
        first, second = spec2ch
        if first.shape != second.shape:
            raise DimensionError(f"Channel spectrograms differ in shape: {first.shape} vs {second.shape}")
        out = np.empty_like(first.bins, dtype=np.complex128)
        for t in range(first.num_frames):
            out[:, t] = self.process_frame(first.bins[:, t], second.bins[:, t])
        return first.with_bins(out)


def gsc_beamform(spec2ch, sv, nlms_mu=NLMS_MU, nlms_eps=NLMS_EPS):
    """Run a fresh :class:`GscBeamformer` over a whole recording."""
    return GscBeamformer(sv, nlms_mu, nlms_eps).process(spec2ch)


def triple_steering(spec2ch, target_angle, width, geometry, cfg=None):
    """Delay-and-sum outputs at the lower edge, target and upper edge angles."""
    cfg = cfg or spec2ch[0].config
    beams = steering_set(target_angle, width, geometry, cfg, spec2ch[0].sample_rate)
    return tuple(das_beamform(spec2ch, sv) for sv in beams)
