"""Test STFT framing, windows and waveform containers."""

import numpy as np
import pytest

from cdunet.errors import ConfigurationError, DimensionError
from cdunet.signal_core import (
    ComplexSpectrogram,
    MultiChannelWaveform,
    StftConfig,
    Waveform,
    istft,
    make_hann,
    stft,
)


def _relative_error(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def _interior(x, cfg):
    # the first and last half-window only see one tapered frame
    edge = cfg.window_size // 2
    return x[edge:-edge]


def test_make_hann_small():
    """Test the closed-form periodic Hann window."""
    np.testing.assert_allclose(make_hann(4), [0.0, 0.5, 1.0, 0.5], atol=1e-15)


def test_make_hann_peak_and_cola():
    """Test the Hann peak and its overlap-add level at 50% overlap."""
    w = make_hann(512)
    assert w[256] == pytest.approx(1.0)
    overlap = w[:256] + w[256:]
    np.testing.assert_allclose(overlap, 1.0, atol=1e-9)


@pytest.mark.parametrize("size", [3, 1, 0, 7])
def test_make_hann_rejects_bad_sizes(size):
    """Test odd or tiny window sizes are rejected."""
    with pytest.raises(ConfigurationError):
        make_hann(size)


def test_stft_config_validation():
    """Test hop and window length validation."""
    with pytest.raises(ConfigurationError):
        StftConfig(512, 513)
    with pytest.raises(ConfigurationError):
        StftConfig(512, 256, np.ones(256))
    assert StftConfig().num_bins == 257
    assert StftConfig().is_cola()
    assert StftConfig().cola_constant() == pytest.approx(1.0)


def test_rectangular_window_is_cola_only_at_integer_fractions():
    """Test the COLA check on rectangular windows."""
    assert StftConfig.rectangular(512).is_cola()
    assert StftConfig.rectangular(512, 256).is_cola()
    assert not StftConfig(512, 200, np.ones(512)).is_cola()


def test_stft_shape_and_zero_input():
    """Test bin count and linearity on a zero signal."""
    rng = np.random.default_rng(0)
    spec = stft(Waveform(rng.standard_normal(16000), 16000))
    assert spec.shape[0] == 257
    zero = stft(Waveform(np.zeros(1024), 16000))
    assert np.all(zero.bins == 0)


def test_stft_bin_center_sinusoid():
    """Test a bin-centred sinusoid lands in one bin with a rectangular window."""
    k = 20
    n = np.arange(512)
    x = np.cos(2 * np.pi * k * n / 512)
    spec = stft(Waveform(x, 16000), StftConfig.rectangular(512))
    mags = np.abs(spec.bins[:, 0])
    assert np.argmax(mags) == k
    others = np.delete(mags, k)
    assert np.max(others) < 1e-9 * mags[k]


def test_stft_rejects_short_input():
    """Test input shorter than one window."""
    with pytest.raises(DimensionError):
        stft(Waveform(np.zeros(100), 16000))


def test_round_trip_many_signals():
    """Test perfect reconstruction over random 1 s signals."""
    rng = np.random.default_rng(1)
    cfg = StftConfig()
    for _ in range(100):
        x = rng.standard_normal(16000)
        y = istft(stft(Waveform(x, 16000), cfg))
        assert len(y) == len(x)
        assert _relative_error(_interior(y.samples, cfg), _interior(x, cfg)) < 1e-6


def test_round_trip_odd_length_and_single_precision():
    """Test length preservation for lengths that are not a hop multiple."""
    rng = np.random.default_rng(2)
    x = rng.standard_normal(5001).astype(np.float32)
    y = istft(stft(Waveform(x, 16000)))
    assert len(y) == 5001
    cfg = StftConfig()
    assert _relative_error(_interior(y.samples.astype(np.float32), cfg), _interior(x, cfg)) < 1e-3


def test_istft_rejects_non_cola():
    """Test inversion refuses a non-COLA configuration."""
    cfg = StftConfig(512, 200, np.ones(512))
    spec = stft(Waveform(np.ones(2048), 16000), cfg)
    with pytest.raises(ConfigurationError):
        istft(spec)


def test_istft_of_zero_spectrogram():
    """Test the zero spectrogram maps to silence."""
    cfg = StftConfig()
    spec = ComplexSpectrogram(np.zeros((257, 5), dtype=complex), cfg, 16000, 1536)
    assert np.all(istft(spec).samples == 0)


def test_parseval_rectangular():
    """Test frame energy matches spectral energy with a rectangular window."""
    rng = np.random.default_rng(3)
    x = rng.standard_normal(512)
    spec = stft(Waveform(x, 16000), StftConfig.rectangular(512))
    full = np.fft.fft(x)
    assert np.sum(np.abs(full) ** 2) / 512 == pytest.approx(np.sum(x**2), rel=1e-9)
    np.testing.assert_allclose(spec.bins[:, 0], full[:257], rtol=1e-12, atol=1e-9)


def test_stft_linearity():
    """Test stft(a x + b y) = a stft(x) + b stft(y)."""
    rng = np.random.default_rng(4)
    x, y = rng.standard_normal((2, 4000))
    lhs = stft(Waveform(2.5 * x - 0.7 * y, 16000)).bins
    rhs = 2.5 * stft(Waveform(x, 16000)).bins - 0.7 * stft(Waveform(y, 16000)).bins
    assert _relative_error(lhs, rhs) < 1e-9


def test_waveform_validation():
    """Test non-finite samples and bad rates are rejected."""
    with pytest.raises(DimensionError):
        Waveform(np.array([0.0, np.nan]), 16000)
    with pytest.raises(ConfigurationError):
        Waveform(np.zeros(4), 0)
    with pytest.raises(DimensionError):
        Waveform(np.zeros((2, 4)), 16000)


def test_multichannel_validation():
    """Test channel length and rate agreement."""
    with pytest.raises(DimensionError):
        MultiChannelWaveform((Waveform(np.zeros(4), 16000), Waveform(np.zeros(5), 16000)))
    with pytest.raises(DimensionError):
        MultiChannelWaveform((Waveform(np.zeros(4), 16000), Waveform(np.zeros(4), 8000)))
    mono = MultiChannelWaveform.from_array(np.zeros((1, 10)), 16000)
    with pytest.raises(DimensionError):
        mono.require_stereo()
    stereo = MultiChannelWaveform.from_array(np.zeros((2, 10)), 16000)
    assert stereo.require_stereo() is stereo
    assert stereo.as_array().shape == (2, 10)
