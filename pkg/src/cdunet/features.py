"""Network input planes and near-microphone selection."""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .beamform import check_azimuth, das_beamform, steering_vector, triple_steering
from .errors import ConfigurationError, DimensionError
from .signal_core import stft

CDUNET_CHANNELS = (
    "mag_mic1",
    "mag_mic2",
    "mag_beam_lo",
    "mag_beam_ctr",
    "mag_beam_hi",
    "phase_mic1",
    "phase_mic2",
    "phase_beam_lo",
    "phase_beam_ctr",
    "phase_beam_hi",
)


class ModelVariant(str, Enum):
    """Input feature sets; the network differs only in its first convolution."""

    CDUNET = "cdunet"
    UNET_PLAIN = "unet_plain"
    UNET_IPD = "unet_ipd"
    UNET_BF = "unet_bf"

    @property
    def channels(self):
        """Feature plane names in network order."""
        return VARIANT_CHANNELS[self]

    @property
    def in_channels(self):
        """Number of feature planes."""
        return len(VARIANT_CHANNELS[self])


VARIANT_CHANNELS = {
    ModelVariant.CDUNET: CDUNET_CHANNELS,
    ModelVariant.UNET_PLAIN: ("mag_mic1", "mag_mic2", "phase_mic1", "phase_mic2"),
    ModelVariant.UNET_IPD: ("mag_mic1", "mag_mic2", "phase_mic1", "phase_mic2", "ipd"),
    ModelVariant.UNET_BF: ("mag_mic1", "mag_mic2", "mag_beam_ctr", "phase_mic1", "phase_mic2", "phase_beam_ctr"),
}


@dataclass(eq=False)
class FeatureBlock:
    """Feature planes ``[channels, bins, frames]`` named by ``channels``."""

    tensor: np.ndarray
    channels: tuple
    target_angle: float
    width: float

    def __post_init__(self):
        self.tensor = np.asarray(self.tensor)
        if self.tensor.ndim != 3 or self.tensor.shape[0] != len(self.channels):
            raise DimensionError(f"Feature tensor {self.tensor.shape} does not have {len(self.channels)} planes")
        for i, name in enumerate(self.channels):
            plane = self.tensor[i]
            if name.startswith("mag") and np.any(plane < 0):
                raise DimensionError(f"Magnitude plane {name} has negative values")
            if not name.startswith("mag") and (np.any(plane <= -np.pi) or np.any(plane > np.pi)):
                raise DimensionError(f"Phase plane {name} leaves (-pi, pi]")

    def plane(self, name):
        """The plane called ``name``."""
        return self.tensor[self.channels.index(name)]


def principal_phase(z):
    """Angle in (-pi, pi]; zero bins have phase 0."""
    phase = np.angle(z)
    phase = np.where(phase <= -np.pi, np.pi, phase)
    return np.where(np.abs(z) == 0, 0.0, phase)


def _check_shapes(spectrograms):
    shapes = {s.shape for s in spectrograms}
    if len(shapes) != 1:
        raise DimensionError(f"Spectrograms disagree in shape: {sorted(shapes)}")


def assemble_features(spec2ch, steered3, target_angle=None, width=None):
    """Five magnitude planes then five phase planes: mic 1, mic 2, lower, centre and upper beams."""
    spectra = tuple(spec2ch) + tuple(steered3)
    if len(spectra) != 5:
        raise DimensionError(f"Expected 2 channels and 3 beams, got {len(spectra)} spectrograms")
    _check_shapes(spectra)
    bins = np.stack([s.bins for s in spectra])
    tensor = np.concatenate([np.abs(bins), principal_phase(bins)])
    return FeatureBlock(tensor, CDUNET_CHANNELS, target_angle, width)


def near_mic_select(target_angle):
    """Microphone (1 or 2) nearer to a target at ``target_angle`` degrees."""
    check_azimuth(target_angle, "target angle")
    return 1 if target_angle < 90.0 else 2


def stft_pair(mixture, cfg=None):
    """STFT of both channels of a stereo recording."""
    mixture.require_stereo()
    return tuple(stft(ch, cfg) for ch in mixture.channels)


def build_features(variant, spec2ch, target_angle, width, geometry):
    """Feature block for ``variant`` from the two channel spectrograms."""
    variant = ModelVariant(variant)
    _check_shapes(spec2ch)
    if variant is ModelVariant.CDUNET:
        return assemble_features(spec2ch, triple_steering(spec2ch, target_angle, width, geometry), target_angle, width)

    raw = np.stack([s.bins for s in spec2ch])
    mags, phases = list(np.abs(raw)), list(principal_phase(raw))
    if variant is ModelVariant.UNET_IPD:
        phases.append(principal_phase(raw[0] * np.conj(raw[1])))
    elif variant is ModelVariant.UNET_BF:
        sv = steering_vector(target_angle, geometry, spec2ch[0].config, spec2ch[0].sample_rate)
        beam = das_beamform(spec2ch, sv).bins
        mags.append(np.abs(beam))
        phases.append(principal_phase(beam))
    elif variant is not ModelVariant.UNET_PLAIN:
        raise ConfigurationError(f"Unsupported variant {variant}")
    return FeatureBlock(np.stack(mags + phases), variant.channels, target_angle, width)
