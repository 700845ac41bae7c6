"""WAV reading and writing (RIFF PCM 16-bit and IEEE float32, mono or stereo)."""

import os

import numpy as np
from loguru import logger
from scipy.io import wavfile

from .errors import AudioFormatError
from .signal_core import MultiChannelWaveform, Waveform

ENCODINGS = ("pcm16", "float32")


def read_wav(path):
    """Read a mono or stereo WAV file into a :class:`MultiChannelWaveform`."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"WAV file not found: {path}")
    try:
        rate, data = wavfile.read(path)
    except ValueError as e:
        raise AudioFormatError(f"{path}: unreadable WAV ({e})") from e

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise AudioFormatError(f"{path}: unsupported sample format {data.dtype}; expected PCM 16-bit or float32")

    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.shape[1] > 2:
        raise AudioFormatError(f"{path}: {samples.shape[1]} channels; only mono and stereo are supported")

    logger.debug(f"Read {path}: {samples.shape[1]} ch, {samples.shape[0]} samples at {rate} Hz")
    return MultiChannelWaveform.from_array(samples.T, rate)


def read_mono(path):
    """Read a WAV file and return its first channel."""
    return read_wav(path).channels[0]


def write_wav(path, audio, encoding="float32"):
    """Write a :class:`Waveform` or :class:`MultiChannelWaveform` to ``path``."""
    if encoding not in ENCODINGS:
        raise AudioFormatError(f"Unknown encoding {encoding!r}; choose one of {ENCODINGS}")
    if isinstance(audio, Waveform):
        audio = MultiChannelWaveform((audio,))
    if audio.num_channels > 2:
        raise AudioFormatError(f"Cannot write {audio.num_channels} channels; only mono and stereo are supported")

    data = audio.as_array().T
    if audio.num_channels == 1:
        data = data[:, 0]
    if encoding == "pcm16":
        data = np.round(np.clip(data, -1.0, 32767.0 / 32768.0) * 32768.0).astype(np.int16)
    else:
        data = data.astype(np.float32)

    wavfile.write(path, audio.sample_rate, data)
    logger.debug(f"Wrote {path} ({encoding}, {audio.num_channels} ch)")
