"""Speech material for simulated scenes.

Experiments need no external corpus: :func:`synthesize_utterance` builds speech-like
signals from a jittered glottal pulse train shaped by three formant resonators, one
formant set per syllable, with syllabic envelopes and pauses. A directory of mono
WAV files can be used instead through :func:`load_speech_pool`.
"""

from pathlib import Path

import numpy as np
from loguru import logger
from scipy import signal

from .constants import DEFAULT_SAMPLE_RATE
from .errors import AudioFormatError, ConfigurationError
from .signal_core import Waveform
from .wavio import read_mono

# Seed stream per pool so training and held-out material never share a generator
POOL_STREAMS = {"train": 1, "heldout": 2}
# Share of a speech directory, taken from the end of the sorted file list, kept for held-out use
HELDOUT_FRACTION = 0.2

FORMANT_RANGES = ((300.0, 900.0), (900.0, 2500.0), (2300.0, 3200.0))  # Hz
BANDWIDTH_RANGE = (60.0, 140.0)  # Hz
PITCH_RANGE = (90.0, 250.0)  # Hz
SYLLABLE_RANGE = (0.12, 0.30)  # s
PAUSE_RANGE = (0.03, 0.20)  # s
TARGET_RMS = 0.1


def _pulse_train(rng, n_samples, f0_start, f0_end, sample_rate):
    excitation = np.zeros(n_samples)
    position = rng.uniform(0, sample_rate / f0_start)
    while position < n_samples:
        excitation[int(position)] = 1.0
        f0 = f0_start + (f0_end - f0_start) * position / n_samples
        position += sample_rate / (f0 * (1.0 + 0.02 * rng.standard_normal()))
    # Glottal roll-off plus a little aspiration noise
    excitation = signal.lfilter([1.0], [1.0, -0.95], excitation)
    return excitation + 0.02 * rng.standard_normal(n_samples)


def _syllable(rng, n_samples, sample_rate):
    f0 = rng.uniform(*PITCH_RANGE)
    voiced = _pulse_train(rng, n_samples, f0, f0 * rng.uniform(0.85, 1.15), sample_rate)
    out = voiced
    for low, high in FORMANT_RANGES:
        centre = min(rng.uniform(low, high), 0.45 * sample_rate)
        bandwidth = rng.uniform(*BANDWIDTH_RANGE)
        b, a = signal.iirpeak(centre, centre / bandwidth, fs=sample_rate)
        out = signal.lfilter(b, a, out)
    return out * signal.windows.hann(n_samples, sym=False)


def synthesize_utterance(rng, duration, sample_rate=DEFAULT_SAMPLE_RATE):
    """Return a speech-like :class:`Waveform` of ``duration`` seconds.

    Args:
        rng: A :class:`numpy.random.Generator`; the output is a pure function of its state.
        duration: Length in seconds.
        sample_rate: Output rate in Hz.
    """
    n_total = int(round(duration * sample_rate))
    if n_total <= 0:
        raise ConfigurationError(f"duration must be positive, got {duration}")
    out = np.zeros(n_total)
    cursor = int(rng.uniform(0.0, 0.1) * sample_rate)
    while cursor < n_total:
        n_syl = int(rng.uniform(*SYLLABLE_RANGE) * sample_rate)
        piece = _syllable(rng, n_syl, sample_rate)[: n_total - cursor]
        out[cursor : cursor + len(piece)] += piece * rng.uniform(0.5, 1.0)
        cursor += n_syl
        if rng.random() < 0.4:
            cursor += int(rng.uniform(*PAUSE_RANGE) * sample_rate)

    rms = np.sqrt(np.mean(out**2))
    if rms > 0:
        out *= TARGET_RMS / rms
    return Waveform(out, sample_rate)


def synthetic_pool(count, seed, duration=2.0, sample_rate=DEFAULT_SAMPLE_RATE, split="train"):
    """Build ``count`` synthetic utterances.

    Pools with different ``split`` values draw from disjoint seed streams, so held-out
    material never repeats training material for the same ``seed``.
    """
    if split not in POOL_STREAMS:
        raise ConfigurationError(f"Unknown pool split {split!r}; expected one of {sorted(POOL_STREAMS)}")
    if count <= 0:
        raise ConfigurationError(f"Speech pool size must be positive, got {count}")
    pool = tuple(
        synthesize_utterance(np.random.default_rng([seed, POOL_STREAMS[split], i]), duration, sample_rate)
        for i in range(count)
    )
    logger.debug(f"Synthesized {count} {split} utterances of {duration} s")
    return pool


def load_speech_pool(directory, sample_rate=DEFAULT_SAMPLE_RATE, split=None):
    """Load every ``*.wav`` in ``directory`` (first channel) as a speech pool.

    With ``split`` set, only that part of the directory is returned (see :func:`split_pool`).
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"Speech directory not found: {directory}")
    pool = []
    for path in sorted(directory.glob("*.wav")):
        w = read_mono(path)
        if w.sample_rate != sample_rate:
            raise AudioFormatError(f"{path}: sample rate {w.sample_rate} Hz, expected {sample_rate} Hz")
        pool.append(w)
    if not pool:
        raise ConfigurationError(f"No WAV files found in {directory}")
    logger.info(f"Loaded {len(pool)} utterances from {directory}")
    return tuple(pool) if split is None else split_pool(pool, split)


def split_pool(pool, split, heldout_fraction=HELDOUT_FRACTION):
    """Deterministic train or held-out part of ``pool``; the two parts never overlap."""
    if split not in POOL_STREAMS:
        raise ConfigurationError(f"Unknown pool split {split!r}; expected one of {sorted(POOL_STREAMS)}")
    if len(pool) < 2:
        raise ConfigurationError(f"Splitting needs at least 2 utterances, got {len(pool)}")
    n_heldout = min(len(pool) - 1, max(1, int(round(heldout_fraction * len(pool)))))
    part = pool[-n_heldout:] if split == "heldout" else pool[:-n_heldout]
    return tuple(part)
