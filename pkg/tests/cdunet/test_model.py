"""Test the mask network, inference, streaming and the weights file."""

import numpy as np
import pytest

from cdunet import autodiff as ad
from cdunet.errors import ConfigurationError, DimensionError, InferenceError, UnsupportedVersionError, WeightsFormatError
from cdunet.features import ModelVariant
from cdunet.losses import si_snri
from cdunet.model import (
    EnhancementRequest,
    ModelConfig,
    StreamingEnhancer,
    cbam_channel_gate,
    estimate_mask,
    forward,
    init_weights,
    layer_plan,
    load_weights,
    param_count,
    save_weights,
)
from cdunet.room import build_example
from cdunet.signal_core import MultiChannelWaveform
from cdunet.speech import synthetic_pool


@pytest.fixture(scope="module")
def weights():
    """Seeded default network shared by the module."""
    return init_weights(ModelConfig(), seed=0)


def _mixture(seed, n=8000):
    rng = np.random.default_rng(seed)
    return MultiChannelWaveform.from_array(0.1 * rng.standard_normal((2, n)), 16000)


def test_param_count(weights):
    """Test the default network size."""
    assert param_count(weights) == 75759
    assert abs(param_count(weights) - 74400) <= 0.1 * 74400
    assert sum(int(np.prod(s)) for s in layer_plan(ModelConfig()).values()) == 75759


def test_variants_differ_only_in_first_convolution():
    """Test the baselines change the input layer and nothing else."""
    full = layer_plan(ModelConfig())
    plain = layer_plan(ModelConfig(variant=ModelVariant.UNET_PLAIN))
    assert full["enc1.conv.weight"] == (16, 10, 5, 3)
    assert plain["enc1.conv.weight"] == (16, 4, 5, 3)
    assert {k for k in full if full[k] != plain[k]} == {"enc1.conv.weight"}


def test_freq_sizes():
    """Test the encoder's frequency resolution ladder."""
    assert ModelConfig().freq_sizes() == [257, 129, 65, 33]


def test_model_config_validation():
    """Test unsupported network shapes."""
    with pytest.raises(ConfigurationError):
        ModelConfig(decoder_channels=(8, 4, 2))
    with pytest.raises(ConfigurationError):
        ModelConfig(cbam_pooling="channel")
    with pytest.raises(ConfigurationError):
        ModelConfig(encoder_channels=(16, 30, 48))
    with pytest.raises(ValueError):
        ModelConfig(variant="transformer")


def test_init_is_deterministic():
    """Test the seed fixes every tensor."""
    a, b, c = init_weights(seed=3), init_weights(seed=3), init_weights(seed=4)
    for name in a.tensors:
        np.testing.assert_array_equal(a.tensors[name].values, b.tensors[name].values)
    assert not np.array_equal(a.tensors["enc1.conv.weight"].values, c.tensors["enc1.conv.weight"].values)
    assert np.all(a.tensors["enc1.norm.gamma"].values == 1)


def test_mask_shape_and_range(weights):
    """Test the sigmoid mask covers every bin and frame within (0, 1)."""
    rng = np.random.default_rng(0)
    features = ad.Tensor(rng.standard_normal((2, 10, 257, 6)).astype(np.float32))
    mask = estimate_mask(weights.parameters(requires_grad=False), features, weights.config).values
    assert mask.shape == (2, 1, 257, 6)
    assert np.all((mask > 0) & (mask < 1))
    with pytest.raises(DimensionError):
        estimate_mask(weights.parameters(), ad.Tensor(np.zeros((1, 4, 257, 6))), weights.config)


def test_channel_gate_pooling():
    """Test global pooling yields one gate per channel and frame pooling one per frame."""
    rng = np.random.default_rng(1)
    y = ad.Tensor(rng.standard_normal((1, 8, 5, 4)))
    params = [ad.Tensor(rng.standard_normal(s)) for s in ((2, 8), (2,), (8, 2), (8,))]
    assert cbam_channel_gate(y, *params, pooling="global").shape == (1, 8, 1, 1)
    frame = cbam_channel_gate(y, *params, pooling="frame").values
    assert frame.shape == (1, 8, 1, 4)
    y.values[..., 3] += 5.0
    np.testing.assert_array_equal(cbam_channel_gate(y, *params, pooling="frame").values[..., :3], frame[..., :3])


def test_forward_preserves_length(weights):
    """Test the enhanced signal matches the input length, including partial frames."""
    for n in (8000, 8123):
        out = forward(EnhancementRequest(_mixture(0, n), 45.0), weights)
        assert len(out) == n
        assert np.all(np.isfinite(out.samples))


def test_unit_mask_returns_near_microphone():
    """Test an all-ones mask reproduces the mixture and scores no improvement."""
    pool = synthetic_pool(2, seed=0, duration=1.0)
    example = build_example("fixed", 0, 0, pool, duration=1.0)
    req = EnhancementRequest(example.mixture, example.metadata.target.azimuth)
    out = forward(req, None, mask_override=1.0)
    near = example.mixture.channels[1 if req.target_angle >= 90 else 0]
    np.testing.assert_allclose(out.samples[256:-256], near.samples[256:-256], atol=1e-10)
    assert si_snri(example.target_reference, out, near) == pytest.approx(0.0, abs=0.1)


@pytest.mark.parametrize(("angle", "near"), [(45.0, 0), (135.0, 1)])
def test_near_microphone_routing(angle, near):
    """Test the target side picks the near microphone and ignores the other one."""
    rng = np.random.default_rng(4)
    data = np.zeros((2, 8000))
    data[near] = 0.1 * rng.standard_normal(8000)
    live = forward(EnhancementRequest(MultiChannelWaveform.from_array(data, 16000), angle), None, mask_override=1.0)
    np.testing.assert_allclose(live.samples[256:-256], data[near, 256:-256], atol=1e-10)
    data = data[::-1].copy()
    silent = forward(EnhancementRequest(MultiChannelWaveform.from_array(data, 16000), angle), None, mask_override=1.0)
    np.testing.assert_array_equal(silent.samples, 0.0)


def test_zero_mask_silences_output():
    """Test a mask forced to zero yields exact silence."""
    out = forward(EnhancementRequest(_mixture(5), 70.0), None, mask_override=0.0)
    assert len(out) == 8000
    np.testing.assert_array_equal(out.samples, 0.0)


def test_request_validation():
    """Test mono input, bad angles and negative widths."""
    mono = MultiChannelWaveform.from_array(np.zeros((1, 1000)), 16000)
    with pytest.raises(DimensionError):
        EnhancementRequest(mono, 90.0)
    with pytest.raises(ConfigurationError):
        EnhancementRequest(_mixture(0), 190.0)
    with pytest.raises(ConfigurationError):
        EnhancementRequest(_mixture(0), 90.0, width=-1.0)


def _causality_holds(weights, seed):
    rng = np.random.default_rng(seed)
    n = 8000
    data = 0.1 * rng.standard_normal((2, n))
    angle = float(rng.uniform(0, 180))
    cut = int(rng.integers(2000, n - 500))
    base = forward(EnhancementRequest(MultiChannelWaveform.from_array(data, 16000), angle), weights).samples
    data[:, cut:] = 0.1 * rng.standard_normal((2, n - cut))
    changed = forward(EnhancementRequest(MultiChannelWaveform.from_array(data, 16000), angle), weights).samples
    stable = cut - 511
    return np.allclose(base[:stable], changed[:stable], rtol=0, atol=1e-7)


def test_forward_is_causal(weights):
    """Test perturbing the future leaves samples more than one window earlier untouched."""
    assert _causality_holds(weights, 0)


@pytest.mark.slow
def test_forward_is_causal_over_random_requests(weights):
    """Test causality over ten random requests."""
    assert all(_causality_holds(weights, seed) for seed in range(1, 11))


def test_streaming_matches_offline(weights):
    """Test chunked output concatenates to the whole-file result."""
    mixture = _mixture(2, 6000)
    offline = forward(EnhancementRequest(mixture, 120.0), weights).samples
    stream = StreamingEnhancer(weights, 120.0)
    data = mixture.as_array()
    pieces = []
    for i in range(0, 6000, 700):
        pieces.append(stream.push(data[:, i : i + 700]))
        assert stream.buffered <= stream.lookahead
    pieces.append(stream.flush())
    assert stream.buffered == 0
    streamed = np.concatenate(pieces)
    assert len(streamed) == 6000
    np.testing.assert_allclose(streamed, offline, rtol=0, atol=1e-6)


def test_streaming_memory_stays_bounded(weights):
    """Test many small chunks keep the held-back input under one window and still match offline."""
    mixture = _mixture(6, 7000)
    offline = forward(EnhancementRequest(mixture, 60.0), weights).samples
    stream = StreamingEnhancer(weights, 60.0)
    data = mixture.as_array()
    pieces = []
    for i in range(0, 7000, 37):
        pieces.append(stream.push(data[:, i : i + 37]))
        assert stream.buffered <= stream.lookahead
        assert stream._input.shape[1] < stream.stft_config.window_size
    pieces.append(stream.flush())
    np.testing.assert_allclose(np.concatenate(pieces), offline, rtol=0, atol=1e-6)


def test_streaming_needs_per_frame_pooling():
    """Test whole-sequence channel pooling cannot be streamed."""
    with pytest.raises(ConfigurationError):
        StreamingEnhancer(init_weights(ModelConfig(cbam_pooling="global"), seed=0), 90.0)


def test_streaming_flush_before_one_window(weights):
    """Test flushing less than one window of input is rejected like the offline path."""
    stream = StreamingEnhancer(weights, 90.0)
    assert len(stream.push(np.zeros((2, 100)))) == 0
    with pytest.raises(DimensionError):
        stream.flush()


def test_streaming_rejects_bad_chunks(weights):
    """Test chunks must be two-channel."""
    with pytest.raises(DimensionError):
        StreamingEnhancer(weights, 90.0).push(np.zeros(100))
    with pytest.raises(ConfigurationError):
        StreamingEnhancer(weights, 200.0)


def test_non_finite_weights_raise(weights):
    """Test NaN activations are reported instead of returned."""
    tensors = {name: ad.Tensor(t.values.copy(), name=name) for name, t in weights.tensors.items()}
    tensors["bottleneck.time_norm.beta"].values[0] = np.nan
    broken = type(weights)(tensors, weights.config)
    with pytest.raises(InferenceError):
        forward(EnhancementRequest(_mixture(3), 90.0), broken)


def test_weights_round_trip(tmp_path, weights):
    """Test save and load reproduce every tensor and infer the variant."""
    path = tmp_path / "model.cdw"
    save_weights(weights, path)
    loaded = load_weights(path)
    assert loaded.config.variant is ModelVariant.CDUNET
    assert list(loaded.tensors) == list(weights.tensors)
    for name, tensor in weights.tensors.items():
        np.testing.assert_array_equal(loaded.tensors[name].values, tensor.values)

    plain = init_weights(ModelConfig(variant="unet_plain"), seed=1)
    save_weights(plain, path)
    assert load_weights(path).config.variant is ModelVariant.UNET_PLAIN


def test_weights_file_errors(tmp_path, weights):
    """Test bad magic, unknown versions, corruption and truncation."""
    path = tmp_path / "model.cdw"
    save_weights(weights, path)
    data = path.read_bytes()

    def load(blob):
        broken = tmp_path / "broken.cdw"
        broken.write_bytes(blob)
        return load_weights(broken)

    with pytest.raises(WeightsFormatError):
        load(b"XXXX" + data[4:])
    with pytest.raises(UnsupportedVersionError):
        load(data[:4] + (2).to_bytes(4, "little") + data[8:])
    corrupted = bytearray(data)
    corrupted[len(data) // 2] ^= 0xFF
    with pytest.raises(WeightsFormatError):
        load(bytes(corrupted))
    with pytest.raises(WeightsFormatError):
        load(data[:-10])
    with pytest.raises(WeightsFormatError):
        load_weights(path, ModelConfig(variant="unet_bf"))
