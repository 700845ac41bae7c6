"""CLI tool to simulate, train, run and evaluate directed speech enhancement."""

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np
import questionary
from loguru import logger

from cdunet.beamform import das_beamform, gsc_beamform, steering_vector
from cdunet.config import initialize_config, load_config
from cdunet.errors import CdunetError
from cdunet.features import ModelVariant, stft_pair
from cdunet.gradcheck import TOLERANCE, run_suite
from cdunet.model import EnhancementRequest, StreamingEnhancer, default_geometry, forward, load_weights, save_weights
from cdunet.room import DATASET_KINDS, build_dataset, load_dataset, write_dataset
from cdunet.signal_core import StftConfig, Waveform, istft
from cdunet.speech import load_speech_pool, synthetic_pool
from cdunet.train import METHODS, SWEEPS, TrainConfig, eval_sweep, train, width_sweep
from cdunet.wavio import read_wav, write_wav

PROMPT_STYLE = questionary.Style(
    [
        ("qmark", "fg:#0891b2 bold"),
        ("question", "bold"),
        ("answer", "fg:#10b981 bold"),
        ("pointer", "fg:#00d9ff bold"),
        ("highlighted", "fg:#00d9ff bold"),
        ("selected", "fg:#10b981 bold"),
    ]
)


def angle(text):
    """Argparse type for azimuths in [0, 180] degrees."""
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 <= value <= 180.0:
        raise argparse.ArgumentTypeError(f"angle must be within [0, 180], got {value:g}")
    return value


def width(text):
    """Argparse type for beam widths >= 0 degrees."""
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if value < 0.0:
        raise argparse.ArgumentTypeError(f"width must be >= 0, got {value:g}")
    return value


def positive_int(text):
    """Argparse type for counts that must be at least 1."""
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def build_parser():
    """Argument parser for every subcommand."""
    parser = argparse.ArgumentParser(prog="cdunet", description=__doc__)
    parser.add_argument("--config", help="configuration file layered over the defaults")
    parser.add_argument("--verbose", action="store_true", help="log at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("init-config", help="copy the default configuration into CDUNET_CONFIG_DIR")

    p = sub.add_parser("simulate", help="simulate a two-microphone dataset")
    p.add_argument("--kind", choices=DATASET_KINDS)
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--speech", help="directory of speech WAVs; synthetic speech when omitted")
    p.add_argument("--duration", type=float)
    p.add_argument("--workers", type=positive_int)

    p = sub.add_parser("beamform", help="steer a beamformer baseline at a target angle")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--method", choices=("das", "gsc"), required=True)
    p.add_argument("--angle", type=angle, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("enhance", help="extract the speaker at a target angle")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--angle", type=angle, required=True)
    p.add_argument("--width", type=width)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stream-chunk", type=positive_int, help="process in chunks of this many samples")

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--out", required=True)
    p.add_argument("--data", help="dataset directory written by 'simulate'")
    p.add_argument("--kind", choices=DATASET_KINDS)
    p.add_argument("--count", type=positive_int)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=positive_int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--variant", choices=[v.value for v in ModelVariant])
    p.add_argument("--speech", help="directory of speech WAVs; synthetic speech when omitted")
    p.add_argument("--log", help="write per-step metrics as JSON lines")

    p = sub.add_parser("eval", help="SI-SNRi sweeps over angles or widths")
    p.add_argument("--sweep", choices=SWEEPS)
    p.add_argument("--out", required=True)
    p.add_argument("--weights")
    p.add_argument("--method", choices=METHODS, default="model")
    p.add_argument("--scenes", type=positive_int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("gradcheck", help="finite-difference audit of every layer")
    p.add_argument("--seed", type=int)
    return parser


def configure_logging(verbose=False):
    """Send log records to standard error as ``[LEVEL] message``."""
    logger.remove()
    logger.add(sys.stderr, level="DEBUG" if verbose else "INFO", format="[{level}] {message}")


def setting(args, config, name, cast):
    """Flag value when given, else the configuration value of the same name."""
    value = getattr(args, name, None)
    return cast(config[name]) if value is None else value


def check_inputs(*paths):
    """Fail before any work when an input file or directory is missing."""
    for path in paths:
        if path is not None and not Path(path).exists():
            raise FileNotFoundError(f"Input not found: {path}")


def check_output(path, directory=False):
    """Fail before any work when ``path`` could not be written.

    A file needs an existing writable parent directory. A ``directory`` output is
    created with its parents, so only the nearest existing ancestor must be writable.
    """
    if path is None:
        return
    parent = Path(path).absolute().parent
    while directory and not parent.exists():
        parent = parent.parent
    if not parent.is_dir():
        raise FileNotFoundError(f"Output directory not found: {parent}")
    if not os.access(parent, os.W_OK):
        raise PermissionError(f"Output directory is not writable: {parent}")


def choose_sweep():
    """Ask which sweep to run; ``None`` when the prompt is cancelled."""
    return questionary.select(
        "Select a sweep to run:",
        choices=list(SWEEPS),
        use_indicator=True,
        style=PROMPT_STYLE,
    ).ask()


def speech_for(args, config, count, seed, split="train"):
    """Speech for one split: its share of the ``--speech`` directory, else synthetic utterances."""
    sample_rate = int(config["sample_rate"])
    if getattr(args, "speech", None):
        return load_speech_pool(args.speech, sample_rate, split=split)
    duration = setting(args, config, "duration", float)
    return synthetic_pool(count, seed, duration, sample_rate, split=split)


def cmd_init_config(args, config):
    """Copy the packaged configuration into the configuration directory."""
    print(initialize_config())
    return 0


def cmd_simulate(args, config):
    """Simulate a dataset and write it to ``--out``."""
    check_inputs(args.speech)
    check_output(args.out, directory=True)
    seed = setting(args, config, "seed", int)
    count = setting(args, config, "count", int)
    pool = speech_for(args, config, int(config["pool_size"]), seed)
    examples = build_dataset(
        setting(args, config, "kind", str),
        count,
        seed,
        pool,
        duration=setting(args, config, "duration", float),
        workers=setting(args, config, "workers", int),
    )
    print(write_dataset(examples, args.out))
    return 0


def cmd_beamform(args, config):
    """Write a DAS or GSC beam of a stereo recording."""
    check_inputs(args.input)
    check_output(args.out)
    mixture = read_wav(args.input).require_stereo()
    spec2ch = stft_pair(mixture)
    sv = steering_vector(args.angle, default_geometry(), spec2ch[0].config, mixture.sample_rate)
    beam = das_beamform(spec2ch, sv) if args.method == "das" else gsc_beamform(spec2ch, sv)
    write_wav(args.out, istft(beam))
    logger.info(f"Wrote {args.method} beam at {args.angle:g} degrees to {args.out}")
    return 0


def cmd_enhance(args, config):
    """Enhance a stereo recording toward ``--angle``, whole-file or in chunks."""
    check_inputs(args.input, args.weights)
    check_output(args.out)
    mixture = read_wav(args.input).require_stereo()
    weights = load_weights(args.weights)
    beam_width = setting(args, config, "width", float)

    started = time.perf_counter()
    if args.stream_chunk:
        stream = StreamingEnhancer(weights, args.angle, beam_width, mixture.sample_rate)
        data = mixture.as_array()
        pieces = [stream.push(data[:, i : i + args.stream_chunk]) for i in range(0, data.shape[1], args.stream_chunk)]
        enhanced = Waveform(np.concatenate(pieces + [stream.flush()]), mixture.sample_rate)
    else:
        enhanced = forward(EnhancementRequest(mixture, args.angle, beam_width), weights, StftConfig())
    elapsed = time.perf_counter() - started

    write_wav(args.out, enhanced)
    rtf = elapsed / max(mixture.channels[0].duration, 1e-9)
    print(f"Real-time factor: {rtf:.3f} ({elapsed:.2f} s for {mixture.channels[0].duration:.2f} s of audio)")
    return 0


def cmd_train(args, config):
    """Train on a simulated or loaded dataset and save the weights."""
    check_inputs(args.data, args.speech)
    check_output(args.out)
    check_output(args.log)
    seed = setting(args, config, "seed", int)
    kind = setting(args, config, "kind", str)
    cfg = TrainConfig(
        steps=setting(args, config, "steps", int),
        batch_size=setting(args, config, "batch_size", int),
        learning_rate=setting(args, config, "lr", float),
        clip_norm=float(config["clip_norm"]),
        seed=seed,
        kind=kind,
        variant=setting(args, config, "variant", str),
        width=float(config["width"]),
        eval_every=int(config["eval_every"]),
    )
    duration = float(config["duration"])
    if args.data:
        dataset = load_dataset(args.data)
    else:
        pool = speech_for(args, config, int(config["pool_size"]), seed)
        dataset = build_dataset(kind, setting(args, config, "count", int), seed, pool, duration)
    heldout_pool = speech_for(args, config, int(config["pool_size"]), seed, split="heldout")
    heldout = build_dataset(kind, int(config["heldout"]), seed + 1, heldout_pool, duration, split="heldout")

    weights, metrics = train(cfg, dataset, heldout=heldout, metrics_path=args.log)
    save_weights(weights, args.out)
    if metrics:
        print(f"Final loss {metrics[-1]['loss']:.4f}; weights written to {args.out}")
    else:
        print(f"No steps run; initial weights written to {args.out}")
    return 0


def cmd_eval(args, config, parser):
    """Run an evaluation sweep and write the table to ``--out``."""
    check_inputs(args.weights)
    check_output(args.out)
    sweep = args.sweep
    if sweep is None:
        if not sys.stdin.isatty():
            parser.error("--sweep is required when not running on a terminal")
        sweep = choose_sweep()
        if sweep is None:
            print("Cancelled.")
            return 0
    if (args.method == "model" or sweep == "width") and not args.weights:
        parser.error(f"--weights is required for the {sweep} sweep with method {args.method}")

    weights = load_weights(args.weights) if args.weights else None
    scenes = setting(args, config, "scenes", int)
    seed = setting(args, config, "seed", int)
    duration = float(config["duration"])
    if sweep == "width":
        table = width_sweep(weights, scenes=scenes, seed=seed, duration=duration)
    else:
        table = eval_sweep(weights, args.method, sweep, scenes=scenes, seed=seed, duration=duration)
    table.to_csv(args.out)
    print(table.frame.to_string(float_format=lambda v: f"{v:.2f}"))
    return 0


def cmd_gradcheck(args, config):
    """Print the finite-difference audit; fails when any layer reaches the tolerance."""
    results = run_suite(seed=setting(args, config, "seed", int))
    failing = []
    for name, error in results.items():
        status = "ok" if error < TOLERANCE else "FAIL"
        print(f"{name:28s} {error:.2e} {status}")
        if error >= TOLERANCE:
            failing.append(name)
    if failing:
        logger.error(f"Gradient check failed for: {', '.join(failing)}")
        return 1
    return 0


COMMANDS = {
    "init-config": cmd_init_config,
    "simulate": cmd_simulate,
    "beamform": cmd_beamform,
    "enhance": cmd_enhance,
    "train": cmd_train,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    """Parse arguments, run one subcommand and exit with its status."""
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)

    try:
        config = load_config(args.config)
        if args.command == "eval":
            code = cmd_eval(args, config, parser)
        else:
            code = COMMANDS[args.command](args, config)
    except KeyboardInterrupt:
        print("\nCancelled.")
        code = 130
    except (CdunetError, OSError) as e:
        logger.error(str(e))
        code = 1
    sys.exit(code)


if __name__ == "__main__":
    main()
