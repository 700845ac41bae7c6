"""Test SI-SNR, the STFT loss and the combined objective."""

import numpy as np
import pytest

from cdunet import autodiff as ad
from cdunet.errors import ConfigurationError, DimensionError, SilentSignalError
from cdunet.losses import (
    LossConfig,
    combined_loss,
    combined_loss_tensor,
    si_snr,
    si_snr_tensor,
    si_snri,
    stft_loss_single,
)
from cdunet.signal_core import Waveform

N = 4000


def _wave(x):
    return Waveform(np.asarray(x, dtype=np.float64), 16000)


def _tone(cycles, phase=0.0):
    n = np.arange(N)
    return np.sin(2 * np.pi * cycles * n / N + phase)


def test_si_snr_is_scale_invariant():
    """Test rescaling the estimate leaves the value unchanged."""
    rng = np.random.default_rng(0)
    s = rng.standard_normal(N)
    s_hat = s + 0.3 * rng.standard_normal(N)
    base = si_snr(_wave(s), _wave(s_hat))
    for scale in (1e-3, 0.5, 7.0, 1e4):
        assert si_snr(_wave(s), _wave(scale * s_hat)) == pytest.approx(base, abs=1e-9)


def test_si_snr_equal_energy_noise_is_zero_db():
    """Test an estimate with as much orthogonal error as target scores 0 dB."""
    s = _tone(5)
    s_hat = s + _tone(5, np.pi / 2)
    assert si_snr(_wave(s), _wave(s_hat)) == pytest.approx(0.0, abs=1e-6)


def test_si_snr_bounds():
    """Test the identical and orthogonal extremes are finite and capped by eps."""
    s = _tone(7)
    assert si_snr(_wave(s), _wave(s)) == pytest.approx(80.0, abs=0.01)
    assert si_snr(_wave(s), _wave(_tone(7, np.pi / 2))) == pytest.approx(-80.0, abs=0.01)
    assert np.isfinite(si_snr(_wave(s), _wave(np.zeros(N))))


def test_si_snr_ignores_dc_offset():
    """Test both signals are mean-removed first."""
    rng = np.random.default_rng(1)
    s = rng.standard_normal(N)
    s_hat = s + 0.5 * rng.standard_normal(N)
    assert si_snr(_wave(s + 3.0), _wave(s_hat - 2.0)) == pytest.approx(si_snr(_wave(s), _wave(s_hat)), abs=1e-9)


def test_si_snr_errors():
    """Test silent or constant references and length mismatches."""
    with pytest.raises(SilentSignalError):
        si_snr(_wave(np.zeros(N)), _wave(_tone(3)))
    with pytest.raises(SilentSignalError):
        si_snr(_wave(np.full(N, 0.5)), _wave(_tone(3)))
    with pytest.raises(DimensionError):
        si_snr(_wave(_tone(3)), _wave(_tone(3)[:-1]))


def test_si_snr_tensor_rows_are_independent():
    """Test the batched form equals the per-signal value."""
    rng = np.random.default_rng(2)
    s = rng.standard_normal((3, N))
    s_hat = s + rng.standard_normal((3, N)) * np.array([[0.1], [1.0], [3.0]])
    batch = si_snr_tensor(ad.Tensor(s), ad.Tensor(s_hat)).values
    for b in range(3):
        assert batch[b] == pytest.approx(si_snr(_wave(s[b]), _wave(s_hat[b])), abs=1e-9)
    assert batch[0] > batch[1] > batch[2]


def test_si_snri():
    """Test the mixture itself scores zero improvement and a better estimate scores more."""
    rng = np.random.default_rng(3)
    s = rng.standard_normal(N)
    mixture = s + rng.standard_normal(N)
    assert si_snri(_wave(s), _wave(mixture), _wave(mixture)) == pytest.approx(0.0, abs=1e-12)
    better = s + 0.1 * rng.standard_normal(N)
    assert si_snri(_wave(s), _wave(better), _wave(mixture)) > 10.0


def test_stft_loss():
    """Test zero for identical signals and positive otherwise."""
    rng = np.random.default_rng(4)
    s = rng.standard_normal(N)
    assert stft_loss_single(_wave(s), _wave(s)) == pytest.approx(0.0, abs=1e-12)
    noisy = stft_loss_single(_wave(s), _wave(s + 0.5 * rng.standard_normal(N)))
    noisier = stft_loss_single(_wave(s), _wave(s + 2.0 * rng.standard_normal(N)))
    assert 0.0 < noisy < noisier


def test_combined_loss_is_weighted_sum():
    """Test the objective combines every resolution and the negated SI-SNR."""
    rng = np.random.default_rng(5)
    s, s_hat = _wave(rng.standard_normal(N)), _wave(rng.standard_normal(N))
    cfg = LossConfig(alpha_stft=0.3, alpha_sisnr=0.7)
    expected = 0.3 * sum(stft_loss_single(s, s_hat, w, h) for w, h in cfg.resolutions) - 0.7 * si_snr(s, s_hat)
    assert combined_loss(s, s_hat, cfg) == pytest.approx(expected, rel=1e-9)


def test_combined_loss_tensor_averages_batch():
    """Test the batch objective is the mean of the per-signal objectives."""
    rng = np.random.default_rng(6)
    s = rng.standard_normal((2, N))
    s_hat = s + rng.standard_normal((2, N))
    batch = combined_loss_tensor(ad.Tensor(s), ad.Tensor(s_hat)).item()
    singles = [combined_loss(_wave(s[b]), _wave(s_hat[b])) for b in range(2)]
    assert batch == pytest.approx(np.mean(singles), rel=1e-9)


def test_loss_gradient_points_toward_reference():
    """Test a small step against the gradient lowers the objective."""
    rng = np.random.default_rng(7)
    s = ad.Tensor(rng.standard_normal((1, N)))
    s_hat = ad.Tensor(s.values + rng.standard_normal((1, N)), requires_grad=True)
    with ad.Tape() as tape:
        loss = combined_loss_tensor(s, s_hat)
    tape.backward(loss)
    stepped = ad.Tensor(s_hat.values - 1e-3 * s_hat.grad / np.max(np.abs(s_hat.grad)))
    assert combined_loss_tensor(s, stepped).item() < loss.item()


def test_loss_config_validation():
    """Test negative or all-zero weights and missing resolutions."""
    with pytest.raises(ConfigurationError):
        LossConfig(alpha_stft=-0.1)
    with pytest.raises(ConfigurationError):
        LossConfig(alpha_stft=0.0, alpha_sisnr=0.0)
    with pytest.raises(ConfigurationError):
        LossConfig(resolutions=())
    assert LossConfig(resolutions=[[64, 32]]).resolutions == ((64, 32),)
