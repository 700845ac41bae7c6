"""SI-SNR, multi-resolution STFT loss and the combined training objective.

Each quantity is defined once on :class:`~cdunet.autodiff.Tensor` batches ``[..., samples]``
so training can differentiate it; the :class:`Waveform` functions evaluate the same
definitions in double precision and return plain floats.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, DimensionError, SilentSignalError
from .signal_core import make_hann

DB_PER_NEPER = float(10.0 / np.log(10.0))
# Keeps the SI-SNR ratio defined for an all-zero estimate
TINY = 1e-20


@dataclass(frozen=True)
class LossConfig:
    """Weights of the spectral and SI-SNR terms and the STFT resolutions."""

    alpha_stft: float = 0.5
    alpha_sisnr: float = 0.5
    resolutions: tuple = ((512, 256), (1024, 512), (256, 128))
    eps: float = 1e-8

    def __post_init__(self):
        if self.alpha_stft < 0 or self.alpha_sisnr < 0 or self.alpha_stft + self.alpha_sisnr == 0:
            raise ConfigurationError(
                f"Loss weights must be >= 0 and not both 0, got {self.alpha_stft}, {self.alpha_sisnr}"
            )
        if not self.resolutions:
            raise ConfigurationError("At least one STFT resolution is required")
        object.__setattr__(self, "resolutions", tuple(tuple(r) for r in self.resolutions))


def si_snr_tensor(s, s_hat, eps=1e-8):
    """SI-SNR in dB along the last axis.

    ``eps`` is scaled by the estimate's energy, which keeps the value exactly scale
    invariant and caps it at about ``-10*log10(eps)`` dB in both directions.
    """
    s = ad.as_tensor(s, s_hat)
    if s.shape != s_hat.shape:
        raise DimensionError(f"Reference {s.shape} and estimate {s_hat.shape} differ in shape")
    s0 = s - ad.mean(s, axis=-1, keepdims=True)
    e0 = s_hat - ad.mean(s_hat, axis=-1, keepdims=True)
    if np.any(np.sum(s0.values**2, axis=-1) == 0):
        raise SilentSignalError("SI-SNR reference has zero energy")
    scale = ad.sum(e0 * s0, axis=-1, keepdims=True) / ad.sum(ad.square(s0), axis=-1, keepdims=True)
    target = scale * s0
    floor = eps * ad.sum(ad.square(e0), axis=-1) + TINY
    num = ad.sum(ad.square(target), axis=-1) + floor
    den = ad.sum(ad.square(e0 - target), axis=-1) + floor
    return DB_PER_NEPER * (ad.log(num) - ad.log(den))


def stft_loss_tensor(s, s_hat, window_size=512, hop_size=256, eps=1e-8):
    """Spectral convergence plus mean log-magnitude distance, per leading index."""
    s = ad.as_tensor(s, s_hat)
    window = make_hann(window_size)
    mag = ad.stft_magnitude(s, window, hop_size)
    mag_hat = ad.stft_magnitude(s_hat, window, hop_size)
    axes = (-2, -1)
    convergence = ad.sqrt(ad.sum(ad.square(mag - mag_hat), axis=axes)) / (
        ad.sqrt(ad.sum(ad.square(mag), axis=axes)) + eps
    )
    log_distance = ad.mean(ad.absolute(ad.log(mag + eps) - ad.log(mag_hat + eps)), axis=axes)
    return convergence + log_distance


def combined_loss_tensor(s, s_hat, cfg=None):
    """``alpha_stft * sum_res stft_loss - alpha_sisnr * si_snr``, averaged over the batch."""
    cfg = cfg or LossConfig()
    total = ad.as_tensor(np.zeros(s_hat.shape[:-1], dtype=s_hat.dtype))
    if cfg.alpha_stft:
        for window_size, hop_size in cfg.resolutions:
            total = total + cfg.alpha_stft * stft_loss_tensor(s, s_hat, window_size, hop_size, cfg.eps)
    if cfg.alpha_sisnr:
        total = total - cfg.alpha_sisnr * si_snr_tensor(s, s_hat, cfg.eps)
    return ad.mean(total)


def _pair(s, s_hat):
    if len(s) != len(s_hat):
        raise DimensionError(f"Reference has {len(s)} samples, estimate has {len(s_hat)}")
    return ad.Tensor(np.asarray(s.samples, dtype=np.float64)), ad.Tensor(np.asarray(s_hat.samples, dtype=np.float64))


def si_snr(s, s_hat, eps=1e-8):
    """Scale-invariant SNR of ``s_hat`` against reference ``s``, in dB."""
    return float(si_snr_tensor(*_pair(s, s_hat), eps).values)


def stft_loss_single(s, s_hat, window_size=512, hop_size=256, eps=1e-8):
    """Single-resolution STFT loss between two waveforms."""
    return float(stft_loss_tensor(*_pair(s, s_hat), window_size, hop_size, eps).values)


def combined_loss(s, s_hat, cfg=None):
    """Training objective between two waveforms (lower is better)."""
    return float(combined_loss_tensor(*_pair(s, s_hat), cfg).values)


def si_snri(s, s_hat, mixture_near, eps=1e-8):
    """SI-SNR improvement of ``s_hat`` over the unprocessed near-microphone signal."""
    return si_snr(s, s_hat, eps) - si_snr(s, mixture_near, eps)
