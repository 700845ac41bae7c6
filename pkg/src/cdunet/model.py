"""Causal U-Net mask estimator with CBAM gates and a dual-path recurrent bottleneck.

Layer plan for the default configuration (``[B, C, F, T]`` shapes, F = 257 bins)::

    enc1  conv 10->16, 5x3, freq stride 2, norm, relu      F 257 -> 129
    enc2  conv 16->32                                       F 129 -> 65
    enc3  conv 32->48                                       F  65 -> 33
    bottleneck  biLSTM over F (8 per direction) + linear 16->48, residual, norm
                LSTM over T (48) + linear 48->48, residual, norm
    dec1  convT [bottleneck ; cbam(enc3)] 96->8, norm, relu, cbam   F 33 -> 65
    dec2  convT [dec1 ; cbam(enc2)] 40->4, norm, relu, cbam         F 65 -> 129
    dec3  convT [dec2 ; cbam(enc1)] 20->1, sigmoid                  F 129 -> 257

Every operation is causal in time, so the mask at frame ``t`` depends on frames
``<= t`` only.
"""

import struct
import zlib
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from loguru import logger

from . import autodiff as ad
from .beamform import check_azimuth
from .constants import DEFAULT_SAMPLE_RATE, DEFAULT_WIDTH
from .errors import (
    ConfigurationError,
    DimensionError,
    InferenceError,
    UnsupportedVersionError,
    WeightsFormatError,
)
from .features import ModelVariant, build_features, near_mic_select, stft_pair
from .signal_core import MultiChannelWaveform, StftConfig, istft, overlap_add

WEIGHTS_MAGIC = b"CDUW"
WEIGHTS_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Network shape; the defaults give 75 759 trainable parameters."""

    variant: ModelVariant = ModelVariant.CDUNET
    encoder_channels: tuple = (16, 32, 48)
    decoder_channels: tuple = (8, 4, 1)
    kernel: tuple = (5, 3)
    freq_stride: int = 2
    freq_hidden: int = 8
    lstm_hidden: int = 48
    cbam_reduction: int = 4
    spatial_kernel: tuple = (7, 7)
    cbam_pooling: str = "frame"
    num_bins: int = 257
    mask_activation: str = "sigmoid"

    def __post_init__(self):
        object.__setattr__(self, "variant", ModelVariant(self.variant))
        object.__setattr__(self, "encoder_channels", tuple(self.encoder_channels))
        object.__setattr__(self, "decoder_channels", tuple(self.decoder_channels))
        if len(self.encoder_channels) != 3 or len(self.decoder_channels) != 3:
            raise ConfigurationError("The network has exactly 3 encoder and 3 decoder blocks")
        if self.decoder_channels[-1] != 1:
            raise ConfigurationError("The last decoder block must produce a single mask channel")
        if self.cbam_pooling not in ("frame", "global"):
            raise ConfigurationError(f"cbam_pooling must be 'frame' or 'global', got {self.cbam_pooling!r}")
        if self.mask_activation != "sigmoid":
            raise ConfigurationError(f"Only the sigmoid mask is supported, got {self.mask_activation!r}")
        for channels in self.gated_channels:
            if channels % self.cbam_reduction:
                raise ConfigurationError(f"{channels} channels are not divisible by reduction {self.cbam_reduction}")

    @property
    def gated_channels(self):
        """Channel counts passing through CBAM: the three skips and the two hidden decoder outputs."""
        return self.encoder_channels + self.decoder_channels[:-1]

    @property
    def in_channels(self):
        """Input planes of the configured variant."""
        return self.variant.in_channels

    def freq_sizes(self):
        """Frequency size at the input and after each encoder block."""
        kf = self.kernel[0]
        sizes = [self.num_bins]
        for _ in self.encoder_channels:
            sizes.append((sizes[-1] + 2 * ((kf - 1) // 2) - kf) // self.freq_stride + 1)
        return sizes


def layer_plan(config):
    """Ordered ``{name: shape}`` of every trainable tensor."""
    kf, kt = config.kernel
    plan = {}

    def norm(prefix, channels):
        plan[f"{prefix}.gamma"] = (channels,)
        plan[f"{prefix}.beta"] = (channels,)

    def lstm(prefix, n_in, hidden):
        plan[f"{prefix}.w_ih"] = (4 * hidden, n_in)
        plan[f"{prefix}.w_hh"] = (4 * hidden, hidden)
        plan[f"{prefix}.bias"] = (4 * hidden,)

    def cbam(prefix, channels):
        reduced = channels // config.cbam_reduction
        plan[f"{prefix}.w1"] = (reduced, channels)
        plan[f"{prefix}.b1"] = (reduced,)
        plan[f"{prefix}.w2"] = (channels, reduced)
        plan[f"{prefix}.b2"] = (channels,)
        plan[f"{prefix}.spatial.weight"] = (1, 2) + tuple(config.spatial_kernel)
        plan[f"{prefix}.spatial.bias"] = (1,)

    c_in = config.in_channels
    for i, c_out in enumerate(config.encoder_channels, start=1):
        plan[f"enc{i}.conv.weight"] = (c_out, c_in, kf, kt)
        plan[f"enc{i}.conv.bias"] = (c_out,)
        norm(f"enc{i}.norm", c_out)
        c_in = c_out

    latent = config.encoder_channels[-1]
    lstm("bottleneck.freq_fwd", latent, config.freq_hidden)
    lstm("bottleneck.freq_bwd", latent, config.freq_hidden)
    plan["bottleneck.freq_proj.weight"] = (latent, 2 * config.freq_hidden)
    plan["bottleneck.freq_proj.bias"] = (latent,)
    norm("bottleneck.freq_norm", latent)
    lstm("bottleneck.time", latent, config.lstm_hidden)
    plan["bottleneck.time_proj.weight"] = (latent, config.lstm_hidden)
    plan["bottleneck.time_proj.bias"] = (latent,)
    norm("bottleneck.time_norm", latent)

    for i in range(len(config.encoder_channels), 0, -1):
        cbam(f"skip{i}.cbam", config.encoder_channels[i - 1])

    prev = latent
    skips = config.encoder_channels[::-1]
    for i, (c_out, skip) in enumerate(zip(config.decoder_channels, skips), start=1):
        plan[f"dec{i}.convt.weight"] = (prev + skip, c_out, kf, kt)
        plan[f"dec{i}.convt.bias"] = (c_out,)
        if i < len(config.decoder_channels):
            norm(f"dec{i}.norm", c_out)
            cbam(f"dec{i}.cbam", c_out)
        prev = c_out
    return plan


@dataclass(eq=False)
class CdunetWeights:
    """Named parameter tensors plus the configuration they were built for."""

    tensors: dict
    config: ModelConfig = field(default_factory=ModelConfig)
    version: int = WEIGHTS_VERSION

    def validate(self):
        """Check names and shapes against :func:`layer_plan`; returns ``self``."""
        plan = layer_plan(self.config)
        if list(self.tensors) != list(plan):
            missing = sorted(set(plan) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(plan))
            raise WeightsFormatError(f"Tensor names do not match the layer plan (missing {missing}, extra {extra})")
        for name, shape in plan.items():
            if self.tensors[name].shape != shape:
                raise WeightsFormatError(f"{name}: shape {self.tensors[name].shape}, expected {shape}")
        return self

    def parameters(self, dtype=np.float32, requires_grad=True):
        """Fresh trainable copies of every tensor."""
        return {
            name: ad.Tensor(t.values.astype(dtype, copy=True), requires_grad=requires_grad, name=name)
            for name, t in self.tensors.items()
        }

    @classmethod
    def from_parameters(cls, params, config):
        """Freeze trained parameters into single-precision weights."""
        tensors = {name: ad.Tensor(p.values.astype(np.float32, copy=True), name=name) for name, p in params.items()}
        return cls(tensors, config).validate()


@dataclass(eq=False)
class EnhancementRequest:
    """A stereo recording and the direction to extract."""

    mixture: MultiChannelWaveform
    target_angle: float
    width: float = DEFAULT_WIDTH
    geometry: object = None

    def __post_init__(self):
        self.mixture.require_stereo()
        check_azimuth(self.target_angle, "target angle")
        if self.width < 0:
            raise ConfigurationError(f"width must be >= 0, got {self.width}")


def init_weights(config=None, seed=0, dtype=np.float32):
    """Random initial weights: uniform fan-in scaling, unit norms, zero biases."""
    config = config or ModelConfig()
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in layer_plan(config).items():
        if name.endswith(".gamma"):
            values = np.ones(shape)
        elif name.endswith((".beta", ".bias", ".b1", ".b2")):
            values = np.zeros(shape)
        elif ".convt." in name:
            fan_in = shape[1] * shape[2] * shape[3]
            values = rng.uniform(-1.0, 1.0, shape) / np.sqrt(fan_in)
        elif name.endswith((".w_ih", ".w_hh")):
            values = rng.uniform(-1.0, 1.0, shape) / np.sqrt(shape[0] // 4)
        else:
            values = rng.uniform(-1.0, 1.0, shape) / np.sqrt(np.prod(shape[1:]))
        tensors[name] = ad.Tensor(values.astype(dtype), name=name)
    for name, t in tensors.items():
        # LSTM forget gates start open
        if name.endswith(".bias") and name.replace(".bias", ".w_hh") in tensors:
            hidden = t.shape[0] // 4
            t.values[hidden : 2 * hidden] = 1.0
    logger.debug(f"Initialized {config.variant.value} weights (seed {seed})")
    return CdunetWeights(tensors, config)


def param_count(weights):
    """Total number of trainable values."""
    tensors = weights.tensors if isinstance(weights, CdunetWeights) else weights
    return int(sum(t.size for t in tensors.values()))


# --------------------------------------------------
# Network blocks
# --------------------------------------------------


class StreamContext:
    """Time context carried between consecutive blocks of frames.

    Holds the last input frames of every time convolution and the state of the time
    LSTM, so running blocks one after another equals one run over all frames.
    """

    def __init__(self):
        self.history = {}
        self.carries = {}

    def extend(self, key, x, frames):
        """``x`` with the ``frames`` frames seen before it for ``key`` prepended; zeros at the start."""
        past = self.history.get(key)
        if past is None:
            past = np.zeros(x.shape[:3] + (frames,), dtype=x.dtype)
        full = np.concatenate([past, x.values], axis=3)
        self.history[key] = full[..., full.shape[3] - frames :]
        return ad.Tensor(full)

    def carry(self, key):
        """Mutable LSTM state slot for ``key``."""
        return self.carries.setdefault(key, {})


def _in_time(context, key, x, frames, op):
    """Apply a time-causal ``op`` reading ``frames`` past frames, continuing ``context`` when given."""
    if context is None or frames == 0:
        return op(x)
    n = x.shape[3]
    return op(context.extend(key, x, frames))[..., -n:]


def _mlp(x, w1, b1, w2, b2):
    return ad.linear(ad.relu(ad.linear(x, w1, b1)), w2, b2)


def cbam_channel_gate(y, w1, b1, w2, b2, pooling="frame"):
    """Channel attention ``sigmoid(mlp(avg) + mlp(max))``.

    With ``pooling="global"`` the statistics cover the whole (F, T) plane and the gate
    is ``[B, C, 1, 1]``; ``"frame"`` pools over frequency per frame, giving a causal
    ``[B, C, 1, T]`` gate.
    """
    if w1.shape[1] != y.shape[1] or w1.shape[1] % w1.shape[0]:
        raise ConfigurationError(f"Channel gate {w1.shape} does not fit {y.shape[1]} channels")
    axes = (2,) if pooling == "frame" else (2, 3)
    pooled = [ad.mean(y, axis=axes, keepdims=True), ad.max(y, axis=axes, keepdims=True)]
    # [B, C, 1, T'] -> [B, 1, T', C] so the MLP acts on channels
    logits = [ad.transpose(_mlp(ad.transpose(p, (0, 2, 3, 1)), w1, b1, w2, b2), (0, 3, 1, 2)) for p in pooled]
    return ad.sigmoid(logits[0] + logits[1])


def cbam_spatial_gate(y, weight, bias, context=None, key="spatial"):
    """Spatial attention from the channel-mean and channel-max maps, ``[B, 1, F, T]``."""
    maps = ad.concat([ad.mean(y, axis=1, keepdims=True), ad.max(y, axis=1, keepdims=True)], axis=1)
    return ad.sigmoid(_in_time(context, key, maps, weight.shape[3] - 1, partial(ad.conv2d, kernel=weight, bias=bias)))


def cbam(y, params, prefix, pooling="frame", context=None):
    """Channel gate then spatial gate, each multiplied into the features."""
    gated = y * cbam_channel_gate(
        y, params[f"{prefix}.w1"], params[f"{prefix}.b1"], params[f"{prefix}.w2"], params[f"{prefix}.b2"], pooling
    )
    spatial = cbam_spatial_gate(
        gated, params[f"{prefix}.spatial.weight"], params[f"{prefix}.spatial.bias"], context, f"{prefix}.spatial"
    )
    return gated * spatial


def _lstm_params(params, prefix):
    return params[f"{prefix}.w_ih"], params[f"{prefix}.w_hh"], params[f"{prefix}.bias"]


def dprnn_bottleneck(latent, params, prefix="bottleneck", context=None):
    """Frequency path (bidirectional) then time path (causal), each residual with layer norm."""
    b, c, f, t = latent.shape
    seq = ad.reshape(ad.transpose(latent, (2, 0, 3, 1)), (f, b * t, c))
    forward = ad.lstm(seq, *_lstm_params(params, f"{prefix}.freq_fwd"))
    backward = ad.lstm(seq, *_lstm_params(params, f"{prefix}.freq_bwd"), reverse=True)
    freq = ad.linear(
        ad.concat([forward, backward], axis=2), params[f"{prefix}.freq_proj.weight"], params[f"{prefix}.freq_proj.bias"]
    )
    freq = ad.transpose(ad.reshape(freq, (f, b, t, c)), (1, 3, 0, 2))
    y = ad.layer_norm(latent + freq, params[f"{prefix}.freq_norm.gamma"], params[f"{prefix}.freq_norm.beta"])

    seq = ad.reshape(ad.transpose(y, (3, 0, 2, 1)), (t, b * f, c))
    carry = None if context is None else context.carry(prefix)
    time = ad.linear(
        ad.lstm(seq, *_lstm_params(params, f"{prefix}.time"), carry=carry),
        params[f"{prefix}.time_proj.weight"],
        params[f"{prefix}.time_proj.bias"],
    )
    time = ad.transpose(ad.reshape(time, (t, b, f, c)), (1, 3, 2, 0))
    return ad.layer_norm(y + time, params[f"{prefix}.time_norm.gamma"], params[f"{prefix}.time_norm.beta"])


def _upsample(y, kernel, bias, stride, freq_size):
    return ad.conv_transpose2d(y, kernel, bias, stride_f=stride, output_size=(freq_size, y.shape[3]))


def _checked(name, x, check_finite):
    if check_finite and not np.all(np.isfinite(x.values)):
        raise InferenceError(f"Non-finite activations after layer {name}")
    return x


def estimate_mask(params, features, config, check_finite=False, context=None):
    """Run the network on ``features`` ``[B, C_in, F, T]``; returns the mask ``[B, 1, F, T]``.

    With a :class:`StreamContext` the frames continue the ones passed in earlier calls.
    """
    if features.ndim != 4 or features.shape[1] != config.in_channels or features.shape[2] != config.num_bins:
        raise DimensionError(
            f"Features {features.shape} do not match [B, {config.in_channels}, {config.num_bins}, T]"
        )
    stride = config.freq_stride
    past = config.kernel[1] - 1
    x = features
    skips = []
    for i in range(1, len(config.encoder_channels) + 1):
        conv = partial(ad.conv2d, kernel=params[f"enc{i}.conv.weight"], bias=params[f"enc{i}.conv.bias"], stride_f=stride)
        x = _in_time(context, f"enc{i}", x, past, conv)
        x = ad.relu(ad.layer_norm(x, params[f"enc{i}.norm.gamma"], params[f"enc{i}.norm.beta"]))
        skips.append(_checked(f"enc{i}", x, check_finite))

    x = _checked("bottleneck", dprnn_bottleneck(x, params, context=context), check_finite)

    sizes = config.freq_sizes()
    n_dec = len(config.decoder_channels)
    for i in range(1, n_dec + 1):
        gated_skip = cbam(skips[-i], params, f"skip{len(skips) - i + 1}.cbam", config.cbam_pooling, context)
        upsample = partial(
            _upsample,
            kernel=params[f"dec{i}.convt.weight"],
            bias=params[f"dec{i}.convt.bias"],
            stride=stride,
            freq_size=sizes[n_dec - i],
        )
        x = _in_time(context, f"dec{i}", ad.concat([x, gated_skip], axis=1), past, upsample)
        if i < n_dec:
            x = ad.relu(ad.layer_norm(x, params[f"dec{i}.norm.gamma"], params[f"dec{i}.norm.beta"]))
            x = cbam(x, params, f"dec{i}.cbam", config.cbam_pooling, context)
        else:
            x = ad.sigmoid(x)
        _checked(f"dec{i}", x, check_finite)
    return x


def apply_mask(mask, spec):
    """Real mask times the complex near-microphone spectrogram."""
    return spec.with_bins(np.asarray(mask) * spec.bins)


def _network_mask(spec2ch, target_angle, width, geometry, weights, params, context=None):
    config = weights.config
    block = build_features(config.variant, spec2ch, target_angle, width, geometry or default_geometry())
    x = ad.Tensor(block.tensor[None].astype(np.float32))
    return estimate_mask(params, x, config, check_finite=True, context=context).values[0, 0].astype(np.float64)


def forward(req, weights, stft_config=None, mask_override=None):
    """Enhance ``req.mixture`` toward ``req.target_angle``.

    Args:
        req: The :class:`EnhancementRequest`.
        weights: Trained :class:`CdunetWeights`.
        stft_config: Analysis settings; defaults to 512/256 Hann.
        mask_override: Constant or ``[bins, frames]`` array used instead of the network.

    Returns:
        The enhanced near-microphone :class:`Waveform`, same length as the input.
    """
    cfg = stft_config or StftConfig()
    spec2ch = stft_pair(req.mixture, cfg)
    near = spec2ch[near_mic_select(req.target_angle) - 1]
    if mask_override is not None:
        mask = np.broadcast_to(np.asarray(mask_override, dtype=np.float64), near.shape)
    else:
        params = weights.parameters(requires_grad=False)
        mask = _network_mask(spec2ch, req.target_angle, req.width, req.geometry, weights, params)
    return istft(apply_mask(mask, near))


def default_geometry():
    """Array used when a request carries none: 30 mm spacing at the origin."""
    from .room import ArrayGeometry

    return ArrayGeometry.at(np.zeros(3))


class StreamingEnhancer:
    """Chunked enhancement that only releases output samples which can no longer change.

    Every complete analysis frame is run through the network once, continuing the
    layer context and recurrent state of the frames before it, and overlap-added into
    the output. Sample ``n`` is released once the frame starting at or before it is
    complete, so at most ``window_size - 1`` input samples are held back. Memory does
    not grow with the stream, and the concatenated output equals :func:`forward` on
    the whole input.
    """

    def __init__(
        self, weights, target_angle, width=DEFAULT_WIDTH, sample_rate=DEFAULT_SAMPLE_RATE, stft_config=None, geometry=None
    ):
        check_azimuth(target_angle, "target angle")
        if weights.config.cbam_pooling != "frame":
            raise ConfigurationError("Streaming needs the causal per-frame CBAM pooling")
        self.weights = weights
        self.target_angle = target_angle
        self.width = width
        self.sample_rate = sample_rate
        self.stft_config = stft_config or StftConfig()
        self.geometry = geometry
        self.lookahead = self.stft_config.window_size - 1
        self._level = self.stft_config.cola_constant()
        if self._level is None:
            raise ConfigurationError(f"Window is not constant-overlap-add at hop {self.stft_config.hop_size}")
        self._params = weights.parameters(requires_grad=False)
        self._context = StreamContext()
        self._near = near_mic_select(target_angle) - 1
        # Input from the start of the next unprocessed frame; overlap-add sums from the first unreleased sample
        self._input = np.zeros((2, 0))
        self._tail = np.zeros(self.stft_config.window_size)
        self._received = 0
        self._emitted = 0

    @property
    def buffered(self):
        """Input samples received but not yet released as output."""
        return self._received - self._emitted

    def _frames(self, count):
        """Run the next ``count`` frames from ``self._input``; returns the samples they complete."""
        cfg = self.stft_config
        span = (count - 1) * cfg.hop_size + cfg.window_size
        segment = MultiChannelWaveform.from_array(self._input[:, :span], self.sample_rate)
        spec2ch = stft_pair(segment, cfg)
        mask = _network_mask(
            spec2ch, self.target_angle, self.width, self.geometry, self.weights, self._params, self._context
        )
        frames = np.fft.irfft((mask * spec2ch[self._near].bins).T, n=cfg.window_size, axis=-1) / self._level
        summed = overlap_add(frames, cfg.hop_size)
        summed[: cfg.window_size] += self._tail
        done = count * cfg.hop_size
        self._tail = np.zeros(cfg.window_size)
        self._tail[: span - done] = summed[done:]
        self._input = self._input[:, done:]
        return summed[:done]

    def push(self, chunk):
        """Add ``[2, n]`` samples; returns the newly final output samples."""
        chunk = np.asarray(chunk, dtype=np.float64)
        if chunk.ndim != 2 or chunk.shape[0] != 2:
            raise DimensionError(f"Stream chunks must be [2, n], got {chunk.shape}")
        self._input = np.concatenate([self._input, chunk], axis=1)
        self._received += chunk.shape[1]
        cfg = self.stft_config
        count = (self._input.shape[1] - cfg.window_size) // cfg.hop_size + 1
        if count <= 0:
            return np.zeros(0)
        out = self._frames(count)
        self._emitted += len(out)
        return out

    def flush(self):
        """Release everything still held back, zero-padding the last frame like :func:`stft`."""
        cfg = self.stft_config
        if self._received <= self._emitted:
            return np.zeros(0)
        remaining = cfg.num_frames(self._received) - self._emitted // cfg.hop_size
        out = np.zeros(0)
        if remaining > 0:
            span = (remaining - 1) * cfg.hop_size + cfg.window_size
            self._input = np.pad(self._input, ((0, 0), (0, span - self._input.shape[1])))
            out = self._frames(remaining)
        out = np.concatenate([out, self._tail])[: self._received - self._emitted]
        self._emitted = self._received
        self._input = np.zeros((2, 0))
        return out


# --------------------------------------------------
# Weights file
# --------------------------------------------------


def save_weights(weights, path):
    """Write ``weights`` in the little-endian ``CDUW`` format with a trailing CRC-32."""
    weights.validate()
    parts = [WEIGHTS_MAGIC, struct.pack("<II", WEIGHTS_VERSION, len(weights.tensors))]
    for name, tensor in weights.tensors.items():
        encoded = name.encode("utf-8")
        shape = tensor.shape
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack(f"<B{len(shape)}I", len(shape), *shape))
        parts.append(np.ascontiguousarray(tensor.values, dtype="<f4").tobytes())
    body = b"".join(parts)
    with open(path, "wb") as f:
        f.write(body + struct.pack("<I", zlib.crc32(body)))
    logger.info(f"Saved {len(weights.tensors)} tensors ({param_count(weights)} parameters) to {path}")


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.path = path
        self.offset = 0

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.data):
            raise WeightsFormatError(f"{self.path}: truncated weights file")
        values = struct.unpack_from(fmt, self.data, self.offset)
        self.offset += size
        return values

    def raw(self, size):
        if self.offset + size > len(self.data):
            raise WeightsFormatError(f"{self.path}: truncated weights file")
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk


def load_weights(path, config=None):
    """Read a weights file; the variant is inferred from the first convolution unless ``config`` is given."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 16 or data[:4] != WEIGHTS_MAGIC:
        raise WeightsFormatError(f"{path}: not a CDUW weights file")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != WEIGHTS_VERSION:
        raise UnsupportedVersionError(f"{path}: weights format version {version}; this build reads {WEIGHTS_VERSION}")
    (stored_crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) != stored_crc:
        raise WeightsFormatError(f"{path}: checksum mismatch (truncated or corrupted file)")

    reader = _Reader(data[:-4], path)
    reader.take("<4sI")
    (count,) = reader.take("<I")
    tensors = {}
    for _ in range(count):
        (name_length,) = reader.take("<H")
        name = reader.raw(name_length).decode("utf-8")
        (rank,) = reader.take("<B")
        shape = reader.take(f"<{rank}I")
        values = np.frombuffer(reader.raw(4 * int(np.prod(shape))), dtype="<f4").astype(np.float32).reshape(shape)
        tensors[name] = ad.Tensor(values, name=name)
    if reader.offset != len(reader.data):
        raise WeightsFormatError(f"{path}: {len(reader.data) - reader.offset} unexpected trailing bytes")

    if config is None:
        first = tensors.get("enc1.conv.weight")
        if first is None:
            raise WeightsFormatError(f"{path}: missing enc1.conv.weight")
        matches = [v for v in ModelVariant if v.in_channels == first.shape[1]]
        if not matches:
            raise WeightsFormatError(f"{path}: no model variant takes {first.shape[1]} input channels")
        config = ModelConfig(variant=matches[0])
    weights = CdunetWeights(tensors, config, version).validate()
    logger.debug(f"Loaded {config.variant.value} weights from {path}")
    return weights
