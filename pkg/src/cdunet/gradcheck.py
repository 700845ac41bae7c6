"""Finite-difference audit of every differentiable operation and network block."""

import numpy as np
from loguru import logger

from . import autodiff as ad
from .losses import LossConfig, combined_loss_tensor
from .model import (
    ModelConfig,
    cbam_channel_gate,
    cbam_spatial_gate,
    dprnn_bottleneck,
    estimate_mask,
    init_weights,
    layer_plan,
)
from .signal_core import make_hann

STEP = 1e-5
TOLERANCE = 1e-4


def relative_error(analytic, numeric):
    """``max|a - n| / max(max|a|, max|n|)``."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0), 1e-12)
    return float(np.max(np.abs(analytic - numeric), initial=0.0) / scale)


def _scalar(fn, inputs, projection):
    out = fn(*inputs)
    return out if projection is None else ad.sum(out * projection)


def check_gradients(fn, inputs, h=STEP, max_coords=None, seed=0):
    """Compare tape gradients with central differences.

    ``fn`` maps the input tensors to any tensor; non-scalar outputs are reduced with
    a fixed random projection. With ``max_coords`` only that many randomly chosen
    coordinates per input are perturbed.

    Returns:
        The largest relative error over all inputs.
    """
    rng = np.random.default_rng(seed)
    reference = fn(*inputs)
    projection = None if reference.ndim == 0 else rng.standard_normal(reference.shape)

    for t in inputs:
        t.zero_grad()
    with ad.Tape() as tape:
        loss = _scalar(fn, inputs, projection)
    tape.backward(loss)

    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        flat = t.values.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        analytic = (t.grad if t.grad is not None else np.zeros_like(t.values)).reshape(-1)[coords]
        numeric = np.empty(len(coords))
        for j, index in enumerate(coords):
            original = flat[index]
            flat[index] = original + h
            upper = _scalar(fn, inputs, projection).item()
            flat[index] = original - h
            lower = _scalar(fn, inputs, projection).item()
            flat[index] = original
            numeric[j] = (upper - lower) / (2.0 * h)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def _param(rng, *shape, scale=1.0):
    return ad.Tensor(scale * rng.standard_normal(shape), requires_grad=True)


def _away_from_zero(rng, *shape):
    x = rng.standard_normal(shape)
    return ad.Tensor(np.sign(x) * (np.abs(x) + 0.1), requires_grad=True)


def toy_config():
    """Small network with every block of the full model, for double-precision audits."""
    return ModelConfig(
        encoder_channels=(4, 4, 8),
        decoder_channels=(4, 4, 1),
        freq_hidden=2,
        lstm_hidden=4,
        spatial_kernel=(3, 3),
        num_bins=17,
    )


def suite(seed=0):
    """``{name: (fn, inputs, max_coords)}`` covering primitives, layers and composites."""
    rng = np.random.default_rng(seed)
    cases = {
        "add": (ad.add, [_param(rng, 3, 4), _param(rng, 1, 4)], None),
        "sub": (ad.sub, [_param(rng, 3, 4), _param(rng, 3, 1)], None),
        "mul": (ad.mul, [_param(rng, 3, 4), _param(rng, 3, 4)], None),
        "div": (ad.div, [_param(rng, 3, 4), ad.Tensor(2.0 + rng.random((3, 4)), requires_grad=True)], None),
        "matmul": (ad.matmul, [_param(rng, 2, 3, 4), _param(rng, 4, 5)], None),
        "sigmoid": (ad.sigmoid, [_param(rng, 3, 4)], None),
        "relu": (ad.relu, [_away_from_zero(rng, 3, 4)], None),
        "tanh": (ad.tanh, [_param(rng, 3, 4)], None),
        "exp": (ad.exp, [_param(rng, 3, 4)], None),
        "log": (ad.log, [ad.Tensor(0.5 + rng.random((3, 4)), requires_grad=True)], None),
        "sqrt": (ad.sqrt, [ad.Tensor(0.5 + rng.random((3, 4)), requires_grad=True)], None),
        "abs": (ad.absolute, [_away_from_zero(rng, 3, 4)], None),
        "mean": (lambda x: ad.mean(x, axis=(0, 2)), [_param(rng, 2, 3, 4)], None),
        "max": (lambda x: ad.max(x, axis=1), [_param(rng, 2, 5, 3)], None),
        "concat": (lambda a, b: ad.concat([a, b], axis=1), [_param(rng, 2, 3), _param(rng, 2, 2)], None),
        "split": (lambda x: ad.split(x, [1, 3], axis=1)[1], [_param(rng, 2, 4)], None),
        "pad": (lambda x: ad.pad(x, ((1, 0), (0, 2))), [_param(rng, 2, 3)], None),
        "crop": (lambda x: ad.crop(x, (slice(None), slice(1, 3))), [_param(rng, 2, 4)], None),
        "transpose": (lambda x: ad.transpose(x, (2, 0, 1)), [_param(rng, 2, 3, 4)], None),
        "layer_norm": (ad.layer_norm, [_param(rng, 2, 4, 3, 2), _param(rng, 4), _param(rng, 4)], None),
        "linear": (ad.linear, [_param(rng, 2, 3, 4), _param(rng, 5, 4), _param(rng, 5)], None),
        "conv2d": (
            lambda x, w, b: ad.conv2d(x, w, b, stride_f=2),
            [_param(rng, 2, 3, 8, 8), _param(rng, 4, 3, 5, 3), _param(rng, 4)],
            None,
        ),
        "conv_transpose2d": (
            lambda y, w, b: ad.conv_transpose2d(y, w, b, stride_f=2),
            [_param(rng, 2, 3, 4, 5), _param(rng, 3, 2, 5, 3), _param(rng, 2)],
            None,
        ),
        "lstm": (ad.lstm, [_param(rng, 4, 2, 3), _param(rng, 20, 3), _param(rng, 20, 5), _param(rng, 20)], None),
        "lstm_reverse": (
            lambda x, wi, wh, b: ad.lstm(x, wi, wh, b, reverse=True),
            [_param(rng, 4, 2, 3), _param(rng, 20, 3), _param(rng, 20, 5), _param(rng, 20)],
            None,
        ),
        "stft_magnitude": (lambda x: ad.stft_magnitude(x, make_hann(16), 8), [_param(rng, 2, 40)], None),
        "istft": (lambda re, im: ad.istft(re, im, 8, 40), [_param(rng, 2, 9, 5), _param(rng, 2, 9, 5)], None),
    }

    c = 8
    cases["cbam_channel_gate"] = (
        cbam_channel_gate,
        [_param(rng, 2, c, 5, 3), _param(rng, 2, c), _param(rng, 2), _param(rng, c, 2), _param(rng, c)],
        None,
    )
    cases["cbam_channel_gate_global"] = (
        lambda y, w1, b1, w2, b2: cbam_channel_gate(y, w1, b1, w2, b2, pooling="global"),
        [_param(rng, 2, c, 5, 3), _param(rng, 2, c), _param(rng, 2), _param(rng, c, 2), _param(rng, c)],
        None,
    )
    cases["cbam_spatial_gate"] = (
        cbam_spatial_gate,
        [_param(rng, 2, 3, 6, 4), _param(rng, 1, 2, 7, 7, scale=0.3), _param(rng, 1)],
        None,
    )

    config = toy_config()
    plan = layer_plan(config)
    names = [n for n in plan if n.startswith("bottleneck.")]
    bottleneck_params = [_param(rng, *plan[n], scale=0.5) for n in names]
    cases["dprnn_bottleneck"] = (
        lambda x, *ps: dprnn_bottleneck(x, dict(zip(names, ps))),
        [_param(rng, 2, config.encoder_channels[-1], 3, 4)] + bottleneck_params,
        12,
    )

    loss_cfg = LossConfig(resolutions=((32, 16), (16, 8)))
    reference = ad.Tensor(rng.standard_normal((2, 96)))
    cases["combined_loss"] = (
        lambda s_hat: combined_loss_tensor(reference, s_hat, loss_cfg),
        [ad.Tensor(reference.values + 0.5 * rng.standard_normal((2, 96)), requires_grad=True)],
        None,
    )

    weights = init_weights(config, seed=seed, dtype=np.float64)
    model_names = list(weights.tensors)
    model_params = list(weights.parameters(dtype=np.float64).values())
    cases["cdunet"] = (
        lambda x, *ps: estimate_mask(dict(zip(model_names, ps)), x, config),
        [ad.Tensor(rng.standard_normal((1, config.in_channels, config.num_bins, 4)), requires_grad=True)]
        + model_params,
        6,
    )
    return cases


def run_suite(seed=0, h=STEP):
    """Audit every case; returns ``{name: max relative error}``."""
    results = {}
    for name, (fn, inputs, max_coords) in suite(seed).items():
        results[name] = check_gradients(fn, inputs, h=h, max_coords=max_coords, seed=seed)
        logger.debug(f"gradcheck {name}: {results[name]:.2e}")
    return results
