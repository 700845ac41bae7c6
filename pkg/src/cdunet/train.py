"""Desk-scale training, baseline variants and the evaluation sweeps."""

import json
from contextlib import nullcontext
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from loguru import logger
from tqdm import tqdm

from . import autodiff as ad
from .beamform import das_beamform, gsc_beamform, steering_vector
from .constants import DEFAULT_WIDTH
from .errors import ConfigurationError, DimensionError, TrainingDivergedError
from .features import ModelVariant, build_features, near_mic_select, stft_pair
from .losses import LossConfig, combined_loss_tensor, si_snri
from .model import CdunetWeights, EnhancementRequest, ModelConfig, estimate_mask, forward, init_weights
from .room import DATASET_KINDS, MixtureExample, build_example
from .signal_core import MultiChannelWaveform, StftConfig, Waveform, istft
from .speech import synthetic_pool

INTERFERENCE_ANGLES = tuple(float(a) for a in range(0, 181, 15))
TARGET_ANGLES = (0.0, 30.0, 60.0, 90.0)
SWEEP_WIDTHS = (3.0, 5.0, 7.0, 15.0, 20.0, 60.0)
METHODS = ("model", "noisy", "das", "gsc")
SWEEPS = ("interference", "target", "width")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings; Adam with global-norm clipping."""

    steps: int = 5000
    batch_size: int = 4
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 5.0
    seed: int = 0
    kind: str = "fixed"
    variant: ModelVariant = ModelVariant.CDUNET
    width: float = DEFAULT_WIDTH
    eval_every: int = 250
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        object.__setattr__(self, "variant", ModelVariant(self.variant))
        if self.steps < 0:
            raise ConfigurationError(f"steps must be >= 0, got {self.steps}")
        if self.batch_size <= 0:
            raise ConfigurationError(f"batch_size must be positive, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigurationError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.kind not in DATASET_KINDS:
            raise ConfigurationError(f"Unknown dataset kind {self.kind!r}")
        if self.eval_every <= 0:
            raise ConfigurationError(f"eval_every must be positive, got {self.eval_every}")


@dataclass
class AdamState:
    """First and second moments per parameter, step count and skipped steps."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    skipped: int = 0


def adam_step(params, grads, state, cfg):
    """Apply one clipped Adam update in place.

    Returns:
        ``False`` when the step was skipped because a gradient was not finite.
    """
    grads = {name: np.zeros_like(p.values) if grads.get(name) is None else grads[name] for name, p in params.items()}
    for name, p in params.items():
        if grads[name].shape != p.shape:
            raise DimensionError(f"Gradient for {name} has shape {grads[name].shape}, parameter {p.shape}")
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        state.skipped += 1
        logger.warning(f"Skipping Adam step with non-finite gradients ({state.skipped} skipped so far)")
        return False

    norm = float(np.sqrt(sum(np.sum(np.square(g, dtype=np.float64)) for g in grads.values())))
    scale = cfg.clip_norm / norm if norm > cfg.clip_norm else 1.0
    state.step += 1
    correction1 = 1.0 - cfg.beta1**state.step
    correction2 = 1.0 - cfg.beta2**state.step
    for name, p in params.items():
        g = grads[name] * scale
        m = cfg.beta1 * state.m.get(name, 0.0) + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v.get(name, 0.0) + (1.0 - cfg.beta2) * g * g
        state.m[name], state.v[name] = m, v
        update = cfg.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + cfg.adam_eps)
        p.values = (p.values - update).astype(p.dtype)
    return True


@dataclass(eq=False)
class PreparedExample:
    """Network inputs and targets for one example."""

    features: np.ndarray
    near_real: np.ndarray
    near_imag: np.ndarray
    reference: np.ndarray
    mixture_near: np.ndarray


def prepare_example(example, variant, width, stft_config=None):
    """Features conditioned on the scene's true target angle, plus the near-mic spectrum."""
    scene = example.metadata
    target = scene.target.azimuth
    spec2ch = stft_pair(example.mixture, stft_config)
    near = near_mic_select(target) - 1
    block = build_features(variant, spec2ch, target, width, scene.array)
    return PreparedExample(
        features=block.tensor.astype(np.float32),
        near_real=spec2ch[near].bins.real.astype(np.float32),
        near_imag=spec2ch[near].bins.imag.astype(np.float32),
        reference=example.target_reference.samples.astype(np.float32),
        mixture_near=example.mixture.channels[near].samples,
    )


def crop_example(example, length):
    """Shorten an example to ``length`` samples."""
    if len(example.mixture) == length:
        return example
    mixture = MultiChannelWaveform.from_array(example.mixture.as_array()[:, :length], example.mixture.sample_rate)
    reference = Waveform(example.target_reference.samples[:length], example.target_reference.sample_rate)
    return MixtureExample(mixture, reference, example.metadata)


def batch_loss(params, batch, config, loss_cfg, stft_config):
    """Combined loss of the masked near-mic reconstruction against the references."""
    features = ad.Tensor(np.stack([p.features for p in batch]))
    mask = estimate_mask(params, features, config)
    b, _, f, t = mask.shape
    mask = ad.reshape(mask, (b, f, t))
    real = mask * np.stack([p.near_real for p in batch])
    imag = mask * np.stack([p.near_imag for p in batch])
    length = batch[0].reference.shape[0]
    estimate = ad.istft(real, imag, stft_config.hop_size, length, stft_config.cola_constant())
    return combined_loss_tensor(np.stack([p.reference for p in batch]), estimate, loss_cfg)


def train(cfg, dataset, heldout=None, weights=None, metrics_path=None, stft_config=None, progress=True):
    """Optimize a model on ``dataset``.

    Args:
        cfg: :class:`TrainConfig`.
        dataset: Training :class:`MixtureExample` list; longer examples are cut to the shortest.
        heldout: Optional examples scored by mean SI-SNRi every ``cfg.eval_every`` steps.
        weights: Starting point; random initialization from ``cfg.seed`` when omitted.
        metrics_path: Where to write one JSON record per step.

    Returns:
        ``(weights, metrics)`` with one ``{"step", "loss"[, "si_snri"]}`` record per step.
    """
    if not dataset:
        raise ConfigurationError("Training dataset is empty")
    stft_config = stft_config or StftConfig()
    if weights is None:
        weights = init_weights(ModelConfig(variant=cfg.variant, num_bins=stft_config.num_bins), cfg.seed)
    elif weights.config.variant is not cfg.variant:
        raise ConfigurationError(f"Weights are for {weights.config.variant.value}, training {cfg.variant.value}")
    config = weights.config
    length = min(len(ex.mixture) for ex in dataset)
    dataset = [crop_example(ex, length) for ex in dataset]

    params = weights.parameters()
    state = AdamState()
    rng = np.random.default_rng(cfg.seed)
    cache = {}
    order = []
    metrics = []
    nan_run = 0

    def prepared(index):
        if index not in cache:
            cache[index] = prepare_example(dataset[index], cfg.variant, cfg.width, stft_config)
        return cache[index]

    with open(metrics_path, "w") if metrics_path else nullcontext() as log_file:
        for step in tqdm(range(1, cfg.steps + 1), desc=f"train {cfg.variant.value}", disable=not progress):
            while len(order) < cfg.batch_size:
                order.extend(rng.permutation(len(dataset)).tolist())
            batch = [prepared(i) for i in order[: cfg.batch_size]]
            del order[: cfg.batch_size]

            for p in params.values():
                p.zero_grad()
            with ad.Tape() as tape:
                loss = batch_loss(params, batch, config, cfg.loss, stft_config)
            value = loss.item()
            record = {"step": step, "loss": value}

            if np.isfinite(value):
                nan_run = 0
                tape.backward(loss)
                adam_step(params, {name: p.grad for name, p in params.items()}, state, cfg)
            else:
                nan_run += 1
                logger.warning(f"Non-finite loss at step {step}")
                if nan_run >= 2:
                    raise TrainingDivergedError(f"Loss was non-finite at steps {step - 1} and {step}; aborting")

            if heldout and (step % cfg.eval_every == 0 or step == cfg.steps):
                current = CdunetWeights.from_parameters(params, config)
                record["si_snri"] = float(np.mean(evaluate("model", heldout, current, cfg.width, stft_config)))
                logger.info(f"step {step}: loss {value:.4f}, held-out SI-SNRi {record['si_snri']:.2f} dB")
            metrics.append(record)
            if log_file is not None:
                log_file.write(json.dumps(record) + "\n")

    if cfg.steps == 0:
        return weights, metrics
    logger.info(f"Trained {cfg.variant.value} for {cfg.steps} steps ({state.skipped} skipped)")
    return CdunetWeights.from_parameters(params, config), metrics


# --------------------------------------------------
# Evaluation
# --------------------------------------------------


def enhance_example(method, example, weights=None, width=DEFAULT_WIDTH, stft_config=None, mask_override=None):
    """Estimate the near-mic target of ``example`` with a model or a network-free baseline."""
    scene = example.metadata
    target = scene.target.azimuth
    near = near_mic_select(target) - 1
    if method == "noisy":
        return example.mixture.channels[near]
    if method in ("das", "gsc"):
        spec2ch = stft_pair(example.mixture, stft_config)
        sv = steering_vector(target, scene.array, spec2ch[0].config, spec2ch[0].sample_rate)
        beam = das_beamform(spec2ch, sv) if method == "das" else gsc_beamform(spec2ch, sv)
        return istft(beam)
    if method != "model":
        raise ConfigurationError(f"Unknown method {method!r}; expected one of {METHODS}")
    if weights is None and mask_override is None:
        raise ConfigurationError("Model evaluation needs weights")
    req = EnhancementRequest(example.mixture, target, width, scene.array)
    return forward(req, weights, stft_config, mask_override)


def evaluate(method, examples, weights=None, width=DEFAULT_WIDTH, stft_config=None, mask_override=None):
    """SI-SNRi of ``method`` on each example."""
    scores = []
    for ex in examples:
        estimate = enhance_example(method, ex, weights, width, stft_config, mask_override)
        near = ex.mixture.channels[near_mic_select(ex.metadata.target.azimuth) - 1]
        scores.append(si_snri(ex.target_reference, estimate, near))
    return scores


@dataclass(eq=False)
class ResultsTable:
    """Mean SI-SNRi per row and angle column, with an ``avg`` column."""

    frame: pd.DataFrame

    @classmethod
    def from_rows(cls, rows, index_name="row"):
        """Build from ``{row label: {column label: value}}``; ``avg`` is added."""
        frame = pd.DataFrame.from_dict(rows, orient="index")
        frame.index.name = index_name
        frame.columns = [str(c) for c in frame.columns]
        frame["avg"] = frame.mean(axis=1)
        return cls(frame)

    @classmethod
    def concat(cls, tables):
        """Stack the rows of several tables."""
        return cls(pd.concat([t.frame for t in tables]))

    @property
    def rows(self):
        """Row labels."""
        return list(self.frame.index)

    @property
    def columns(self):
        """Column labels, ``avg`` last."""
        return list(self.frame.columns)

    def value(self, row, column):
        """Value of one cell."""
        return float(self.frame.loc[row, str(column)])

    def to_csv(self, path):
        """Write the table with full float precision."""
        self.frame.to_csv(path, float_format="%.17g")
        logger.info(f"Wrote results table to {path}")

    @classmethod
    def from_csv(cls, path):
        """Read a table written by :meth:`to_csv`."""
        frame = pd.read_csv(path, index_col=0, float_precision="round_trip")
        frame.index = frame.index.astype(str)
        return cls(frame)

    def equals(self, other):
        """Whether both tables hold the same labels and values."""
        return self.frame.equals(other.frame)


def _angle_label(angle):
    return f"{angle:g}"


def _method_label(method, weights):
    if method != "model":
        return method
    return weights.config.variant.value if weights is not None else "model"


def _cell(method, weights, kind, column, pins, scenes, seed, pool, duration, width, stft_config, mask_override):
    examples = [
        build_example(kind, column * scenes + k, seed, pool, duration, split="heldout", **pins) for k in range(scenes)
    ]
    return float(np.mean(evaluate(method, examples, weights, width, stft_config, mask_override)))


def eval_sweep(
    weights=None,
    method="model",
    sweep="interference",
    snr_levels=None,
    angles=None,
    scenes=20,
    seed=0,
    width=DEFAULT_WIDTH,
    speech_pool=None,
    duration=2.0,
    stft_config=None,
    mask_override=None,
):
    """Mean SI-SNRi over ``scenes`` held-out scenes per (SNR, angle) cell.

    ``sweep="interference"`` keeps the target within 85-95 degrees and places the
    interferer at each of ``angles`` (0-180 in 15 degree steps, SNR 0 and 5 dB);
    ``sweep="target"`` places the target at each of ``angles`` (0, 30, 60, 90) with the
    interferer 15 degrees away at 0 dB. Every method sees the same scenes.
    """
    if sweep == "interference":
        kind, pin = "fixed", "interferer_azimuth"
        angles = INTERFERENCE_ANGLES if angles is None else angles
        snr_levels = (0.0, 5.0) if snr_levels is None else snr_levels
    elif sweep == "target":
        kind, pin = "variable", "target_azimuth"
        angles = TARGET_ANGLES if angles is None else angles
        snr_levels = (0.0,) if snr_levels is None else snr_levels
    else:
        raise ConfigurationError(f"Unknown sweep {sweep!r}; eval_sweep runs 'interference' or 'target'")
    if scenes <= 0:
        raise ConfigurationError(f"scenes must be positive, got {scenes}")
    pool = speech_pool or synthetic_pool(max(4, 2 * scenes), seed, duration, split="heldout")
    label = _method_label(method, weights)

    rows = {}
    for snr in snr_levels:
        row = {}
        for column, angle in enumerate(tqdm(angles, desc=f"{label} @ {snr:g} dB", disable=len(angles) < 2)):
            pins = {pin: angle, "snr_db": snr}
            row[_angle_label(angle)] = _cell(
                method, weights, kind, column, pins, scenes, seed, pool, duration, width, stft_config, mask_override
            )
        rows[f"{label}@{snr:g}dB"] = row
    return ResultsTable.from_rows(rows)


def width_sweep(
    weights, widths=SWEEP_WIDTHS, angles=None, snr_db=0.0, scenes=20, seed=0, speech_pool=None, duration=2.0
):
    """Interference sweep at each input width; one row per width.

    Args:
        weights: One :class:`CdunetWeights` for every width, or ``{width: weights}``.
    """
    angles = INTERFERENCE_ANGLES if angles is None else angles
    pool = speech_pool or synthetic_pool(max(4, 2 * scenes), seed, duration, split="heldout")
    rows = {}
    for width in widths:
        model = weights[width] if isinstance(weights, dict) else weights
        table = eval_sweep(
            model,
            sweep="interference",
            snr_levels=(snr_db,),
            angles=angles,
            scenes=scenes,
            seed=seed,
            width=width,
            speech_pool=pool,
            duration=duration,
        )
        rows[_angle_label(width)] = table.frame.drop(columns="avg").iloc[0].to_dict()
    return ResultsTable.from_rows(rows, index_name="width")
