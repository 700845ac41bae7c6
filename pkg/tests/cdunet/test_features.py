"""Test feature assembly, variants and near-microphone selection."""

import numpy as np
import pytest

from cdunet.beamform import das_beamform, steering_vector
from cdunet.errors import DimensionError
from cdunet.features import (
    CDUNET_CHANNELS,
    FeatureBlock,
    ModelVariant,
    assemble_features,
    build_features,
    near_mic_select,
    principal_phase,
    stft_pair,
)
from cdunet.room import ArrayGeometry
from cdunet.signal_core import ComplexSpectrogram, MultiChannelWaveform, StftConfig, Waveform, stft

GEOMETRY = ArrayGeometry.at(np.zeros(3))


def _pair(seed=0, n=4096):
    rng = np.random.default_rng(seed)
    mixture = MultiChannelWaveform.from_array(rng.standard_normal((2, n)), 16000)
    return stft_pair(mixture)


def test_near_mic_select():
    """Test the single breakpoint at 90 degrees."""
    assert near_mic_select(0.0) == 1
    assert near_mic_select(45.0) == 1
    assert near_mic_select(89.999) == 1
    assert near_mic_select(90.0) == 2
    assert near_mic_select(135.0) == 2
    assert near_mic_select(180.0) == 2


def test_principal_phase():
    """Test the (-pi, pi] range and zero-bin convention."""
    z = np.array([0j, -1 + 0j, -1 - 0j, 1j, -1j])
    np.testing.assert_allclose(principal_phase(z), [0.0, np.pi, np.pi, np.pi / 2, -np.pi / 2])


def test_assemble_features_zero_input():
    """Test zero spectrograms give zero magnitudes and phases."""
    cfg = StftConfig()
    zero = ComplexSpectrogram(np.zeros((257, 4), dtype=complex), cfg, 16000, 1280)
    block = assemble_features((zero, zero), (zero, zero, zero))
    assert block.tensor.shape == (10, 257, 4)
    assert np.all(block.tensor == 0)


def test_assemble_features_polar_identity():
    """Test every complex plane is recovered from its magnitude and phase."""
    spec2ch = _pair(1)
    beams = tuple(s.with_bins(s.bins * (k + 1)) for k, s in enumerate(spec2ch + spec2ch[:1]))
    block = assemble_features(spec2ch, beams, 90.0, 7.0)
    assert block.channels == CDUNET_CHANNELS
    originals = [s.bins for s in spec2ch + beams]
    for i, original in enumerate(originals):
        rebuilt = block.tensor[i] * np.exp(1j * block.tensor[5 + i])
        np.testing.assert_allclose(rebuilt, original, atol=1e-6)
    assert np.all(block.tensor[:5] >= 0)
    assert np.all((block.tensor[5:] > -np.pi) & (block.tensor[5:] <= np.pi))


def test_assemble_features_shape_checks():
    """Test mismatched or missing spectrograms."""
    spec2ch = _pair(2)
    short = stft(Waveform(np.zeros(1024), 16000))
    with pytest.raises(DimensionError):
        assemble_features(spec2ch, (short, short, short))
    with pytest.raises(DimensionError):
        assemble_features(spec2ch, spec2ch)


def test_feature_block_validation():
    """Test negative magnitudes and plane count mismatches are rejected."""
    tensor = np.zeros((10, 3, 2))
    tensor[0, 0, 0] = -1.0
    with pytest.raises(DimensionError):
        FeatureBlock(tensor, CDUNET_CHANNELS, 90.0, 7.0)
    with pytest.raises(DimensionError):
        FeatureBlock(np.zeros((4, 3, 2)), CDUNET_CHANNELS, 90.0, 7.0)


def test_build_features_cdunet():
    """Test the full input uses the triple-steering beams."""
    spec2ch = _pair(3)
    block = build_features("cdunet", spec2ch, 60.0, 7.0, GEOMETRY)
    assert block.tensor.shape[0] == 10
    center = das_beamform(spec2ch, steering_vector(60.0, GEOMETRY))
    np.testing.assert_allclose(block.plane("mag_beam_ctr"), np.abs(center.bins))


@pytest.mark.parametrize(
    "variant, count",
    [(ModelVariant.UNET_PLAIN, 4), (ModelVariant.UNET_IPD, 5), (ModelVariant.UNET_BF, 6), (ModelVariant.CDUNET, 10)],
)
def test_variant_channel_counts(variant, count):
    """Test each baseline variant's plane count."""
    block = build_features(variant, _pair(4), 120.0, 7.0, GEOMETRY)
    assert variant.in_channels == count
    assert block.tensor.shape[0] == count
    assert block.channels == variant.channels


def test_ipd_plane():
    """Test the inter-channel phase difference plane."""
    spec2ch = _pair(5)
    block = build_features(ModelVariant.UNET_IPD, spec2ch, 30.0, 7.0, GEOMETRY)
    expected = principal_phase(spec2ch[0].bins * np.conj(spec2ch[1].bins))
    np.testing.assert_allclose(block.plane("ipd"), expected)


def test_width_only_moves_the_outer_beams():
    """Test the centre beam and microphone planes are bit-identical across widths."""
    spec2ch = _pair(5)
    narrow = build_features("cdunet", spec2ch, 60.0, 3.0, GEOMETRY)
    wide = build_features("cdunet", spec2ch, 60.0, 15.0, GEOMETRY)
    for name in ("mag_mic1", "mag_mic2", "mag_beam_ctr", "phase_mic1", "phase_mic2", "phase_beam_ctr"):
        np.testing.assert_array_equal(narrow.plane(name), wide.plane(name))
    assert not np.array_equal(narrow.plane("mag_beam_lo"), wide.plane("mag_beam_lo"))
    assert not np.array_equal(narrow.plane("phase_beam_hi"), wide.plane("phase_beam_hi"))
    assert (narrow.width, wide.width) == (3.0, 15.0)
