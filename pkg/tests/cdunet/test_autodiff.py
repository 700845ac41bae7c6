"""Test tensors, the tape and the differentiable layers."""

import threading

import numpy as np
import pytest

from cdunet import autodiff as ad
from cdunet.errors import DimensionError
from cdunet.signal_core import ComplexSpectrogram, StftConfig, Waveform, istft, make_hann, stft


def _param(rng, *shape):
    return ad.Tensor(rng.standard_normal(shape), requires_grad=True)


def test_add_backward():
    """Test d(sum(a + b))/da is all ones."""
    a = ad.Tensor(np.array([1.0, 2.0]), requires_grad=True)
    b = ad.Tensor(np.array([3.0, 4.0]), requires_grad=True)
    with ad.Tape() as tape:
        loss = ad.sum(a + b)
    tape.backward(loss)
    np.testing.assert_array_equal(a.grad, [1.0, 1.0])
    np.testing.assert_array_equal(b.grad, [1.0, 1.0])


def test_mul_backward():
    """Test d(sum(x * x))/dx = 2x."""
    x = ad.Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    with ad.Tape() as tape:
        loss = ad.sum(x * x)
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, [2.0, -4.0, 6.0])


def test_sigmoid_at_zero():
    """Test sigmoid(0) = 0.5 with gradient 0.25."""
    x = ad.Tensor(np.array(0.0), requires_grad=True)
    with ad.Tape() as tape:
        y = ad.sigmoid(x)
    tape.backward(y)
    assert y.item() == pytest.approx(0.5)
    assert float(x.grad) == pytest.approx(0.25)


def test_broadcast_gradients_are_reduced():
    """Test bias-style broadcasting sums the gradient over expanded axes."""
    x = ad.Tensor(np.ones((2, 3, 4)), requires_grad=True)
    bias = ad.Tensor(np.zeros((3, 1)), requires_grad=True)
    with ad.Tape() as tape:
        loss = ad.sum(x + bias)
    tape.backward(loss)
    assert bias.grad.shape == (3, 1)
    np.testing.assert_array_equal(bias.grad, np.full((3, 1), 8.0))


def test_numpy_operands_defer_to_tensor():
    """Test arrays and numpy scalars on the left produce tensors."""
    x = ad.Tensor(np.array([1.0, 2.0]), requires_grad=True)
    assert isinstance(np.array([2.0, 3.0]) * x, ad.Tensor)
    assert isinstance(np.float64(2.0) + x, ad.Tensor)
    assert isinstance(1.0 - x, ad.Tensor)
    with ad.Tape() as tape:
        loss = ad.sum(np.array([2.0, 3.0]) * x)
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, [2.0, 3.0])


def test_nothing_recorded_without_tape_or_grad():
    """Test constants and tape-less operations leave no nodes."""
    x = ad.Tensor(np.ones(3), requires_grad=True)
    y = ad.sum(x * 2.0)
    assert y.requires_grad
    const = ad.Tensor(np.ones(3))
    with ad.Tape() as tape:
        ad.sum(const * 2.0)
    assert tape.nodes == []


def test_gradients_accumulate_over_uses():
    """Test a tensor used twice receives both contributions."""
    x = ad.Tensor(np.array(3.0), requires_grad=True)
    with ad.Tape() as tape:
        loss = x * x + x
    tape.backward(loss)
    assert float(x.grad) == 7.0


def test_tapes_are_per_thread():
    """Test a tape in one thread does not see operations from another."""
    recorded = {}

    def worker(name, scale):
        x = ad.Tensor(np.ones(4), requires_grad=True)
        with ad.Tape() as tape:
            loss = ad.sum(x * scale)
        tape.backward(loss)
        recorded[name] = (len(tape.nodes), x.grad.copy())

    threads = [threading.Thread(target=worker, args=(i, float(i + 1))) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for i in range(4):
        assert recorded[i][0] == 2
        np.testing.assert_array_equal(recorded[i][1], np.full(4, i + 1.0))


def test_sqrt_and_abs_at_zero():
    """Test the zero-point conventions of sqrt and abs."""
    x = ad.Tensor(np.array([0.0, 4.0]), requires_grad=True)
    with ad.Tape() as tape:
        loss = ad.sum(ad.sqrt(x))
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, [0.0, 0.25])

    z = ad.Tensor(np.array([0.0, -2.0]), requires_grad=True)
    with ad.Tape() as tape:
        loss = ad.sum(ad.absolute(z))
    tape.backward(loss)
    np.testing.assert_array_equal(z.grad, [0.0, -1.0])


def test_max_sends_gradient_to_first_maximum():
    """Test ties route the gradient to the first maximal element."""
    x = ad.Tensor(np.array([[1.0, 5.0, 5.0], [2.0, 0.0, 1.0]]), requires_grad=True)
    with ad.Tape() as tape:
        out = ad.max(x, axis=1)
        loss = ad.sum(out)
    tape.backward(loss)
    np.testing.assert_array_equal(out.values, [5.0, 2.0])
    np.testing.assert_array_equal(x.grad, [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])


def test_reduction_axis_errors():
    """Test reductions reject out-of-range axes."""
    with pytest.raises(DimensionError):
        ad.sum(ad.Tensor(np.ones((2, 2))), axis=2)
    with pytest.raises(DimensionError):
        ad.split(ad.Tensor(np.ones((2, 5))), [2, 2], axis=1)


def test_split_and_concat_invert():
    """Test split followed by concat reproduces the input."""
    x = ad.Tensor(np.arange(12.0).reshape(3, 4))
    pieces = ad.split(x, [1, 3], axis=1)
    assert [p.shape for p in pieces] == [(3, 1), (3, 3)]
    np.testing.assert_array_equal(ad.concat(pieces, axis=1).values, x.values)


def test_layer_norm_normalizes_channels():
    """Test zero mean and unit variance over the channel axis."""
    rng = np.random.default_rng(0)
    x = ad.Tensor(3.0 + 2.0 * rng.standard_normal((2, 8, 5, 4)))
    out = ad.layer_norm(x, ad.Tensor(np.ones(8)), ad.Tensor(np.zeros(8)))
    np.testing.assert_allclose(out.values.mean(axis=1), 0.0, atol=1e-10)
    np.testing.assert_allclose(out.values.var(axis=1), 1.0, atol=1e-3)


def test_conv2d_matches_direct_sum():
    """Test the convolution against an explicit causal loop."""
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1, 2, 6, 5))
    k = rng.standard_normal((3, 2, 3, 2))
    out = ad.conv2d(ad.Tensor(x), ad.Tensor(k)).values
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 0)))
    expected = np.zeros((1, 3, 6, 5))
    for o in range(3):
        for f in range(6):
            for t in range(5):
                expected[0, o, f, t] = np.sum(xp[0, :, f : f + 3, t : t + 2] * k[o])
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_conv2d_stride_shapes():
    """Test frequency striding halves the bins as in the encoder."""
    x = ad.Tensor(np.zeros((1, 10, 257, 7)))
    k = ad.Tensor(np.zeros((16, 10, 5, 3)))
    assert ad.conv2d(x, k, stride_f=2).shape == (1, 16, 129, 7)
    with pytest.raises(DimensionError):
        ad.conv2d(x, ad.Tensor(np.zeros((16, 4, 5, 3))))
    with pytest.raises(DimensionError):
        ad.conv2d(x, k, pad_mode="centered")


def test_conv2d_causal_in_time():
    """Test output frame t only reads input frames up to t."""
    rng = np.random.default_rng(2)
    x = rng.standard_normal((1, 2, 8, 10))
    k = ad.Tensor(rng.standard_normal((3, 2, 5, 3)))
    base = ad.conv2d(ad.Tensor(x), k, stride_f=2).values
    x[..., 6:] += 1.0
    changed = ad.conv2d(ad.Tensor(x), k, stride_f=2).values
    np.testing.assert_array_equal(base[..., :6], changed[..., :6])


def test_conv_transpose_is_adjoint_of_lookahead_conv():
    """Test <conv(x), y> = <x, conv_transpose(y)>."""
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 3, 9, 6))
    k = rng.standard_normal((4, 3, 5, 3))
    y = rng.standard_normal((2, 4, 5, 6))
    forward = ad.conv2d(ad.Tensor(x), ad.Tensor(k), stride_f=2, pad_mode="lookahead_time").values
    assert forward.shape == y.shape
    adjoint = ad.conv_transpose2d(ad.Tensor(y), ad.Tensor(k), stride_f=2, output_size=(9, 6)).values
    assert np.sum(forward * y) == pytest.approx(np.sum(x * adjoint), rel=1e-10)


def test_conv_transpose_causal_and_sizes():
    """Test decoder upsampling sizes and causality."""
    rng = np.random.default_rng(4)
    y = rng.standard_normal((1, 4, 33, 8))
    k = ad.Tensor(rng.standard_normal((4, 2, 5, 3)))
    base = ad.conv_transpose2d(ad.Tensor(y), k, stride_f=2, output_size=(65, 8)).values
    assert base.shape == (1, 2, 65, 8)
    y[..., 5:] -= 2.0
    changed = ad.conv_transpose2d(ad.Tensor(y), k, stride_f=2, output_size=(65, 8)).values
    np.testing.assert_array_equal(base[..., :5], changed[..., :5])
    with pytest.raises(DimensionError):
        ad.conv_transpose2d(ad.Tensor(y), k, stride_f=2, output_size=(80, 8))


def test_lstm_zero_weights():
    """Test zero weights give zero hidden states of the right shape."""
    x = ad.Tensor(np.ones((4, 2, 3)))
    out = ad.lstm(x, ad.Tensor(np.zeros((20, 3))), ad.Tensor(np.zeros((20, 5))), ad.Tensor(np.zeros(20)))
    assert out.shape == (4, 2, 5)
    np.testing.assert_array_equal(out.values, 0.0)


def test_lstm_direction_causality():
    """Test forward outputs ignore later steps and reverse outputs ignore earlier ones."""
    rng = np.random.default_rng(5)
    weights = [ad.Tensor(rng.standard_normal(s)) for s in ((16, 3), (16, 4), (16,))]
    x = rng.standard_normal((6, 1, 3))
    fwd = ad.lstm(ad.Tensor(x), *weights).values
    bwd = ad.lstm(ad.Tensor(x), *weights, reverse=True).values
    x[4:] += 1.0
    np.testing.assert_array_equal(ad.lstm(ad.Tensor(x), *weights).values[:4], fwd[:4])
    assert not np.allclose(ad.lstm(ad.Tensor(x), *weights, reverse=True).values[:4], bwd[:4])
    with pytest.raises(DimensionError):
        ad.lstm(ad.Tensor(np.ones((6, 3))), *weights)


def test_lstm_carry_continues_the_sequence():
    """Test running two halves with a carried state equals one pass over the whole."""
    rng = np.random.default_rng(6)
    weights = [ad.Tensor(rng.standard_normal(s)) for s in ((16, 3), (16, 4), (16,))]
    x = rng.standard_normal((8, 2, 3))
    whole = ad.lstm(ad.Tensor(x), *weights).values
    carry = {}
    first = ad.lstm(ad.Tensor(x[:5]), *weights, carry=carry).values
    np.testing.assert_allclose(carry["h"], first[-1], atol=1e-12)
    second = ad.lstm(ad.Tensor(x[5:]), *weights, carry=carry).values
    np.testing.assert_allclose(np.concatenate([first, second]), whole, atol=1e-12)
    with pytest.raises(DimensionError):
        ad.lstm(ad.Tensor(x[:, :1]), *weights, carry=carry)


def test_stft_magnitude_matches_signal_core():
    """Test the differentiable magnitude equals |stft| for a batch."""
    rng = np.random.default_rng(6)
    x = rng.standard_normal((2, 3000))
    mag = ad.stft_magnitude(ad.Tensor(x), make_hann(512), 256).values
    for b in range(2):
        reference = np.abs(stft(Waveform(x[b], 16000)).bins)
        np.testing.assert_allclose(mag[b], reference, atol=1e-5)


def test_istft_matches_signal_core():
    """Test the differentiable inverse equals the waveform inverse."""
    rng = np.random.default_rng(7)
    bins = rng.standard_normal((257, 12)) + 1j * rng.standard_normal((257, 12))
    bins[0].imag = 0
    bins[-1].imag = 0
    cfg = StftConfig()
    spec = ComplexSpectrogram(bins, cfg, 16000, 3000)
    out = ad.istft(ad.Tensor(bins.real), ad.Tensor(bins.imag), 256, 3000, cfg.cola_constant()).values
    np.testing.assert_allclose(out, istft(spec).samples, atol=1e-12)
    with pytest.raises(DimensionError):
        ad.istft(ad.Tensor(bins.real), ad.Tensor(bins.imag), 256, 10000)


def test_float32_is_preserved():
    """Test single precision stays single through layers."""
    rng = np.random.default_rng(8)
    x = ad.Tensor(rng.standard_normal((1, 2, 8, 4)).astype(np.float32))
    k = ad.Tensor(rng.standard_normal((3, 2, 5, 3)).astype(np.float32))
    out = ad.sigmoid(ad.conv2d(x, k, stride_f=2)) * 2.0
    assert out.dtype == np.float32
