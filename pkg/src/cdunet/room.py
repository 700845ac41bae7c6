"""Simulated rooms, impulse responses and two-microphone mixtures.

Rooms are shoeboxes with one absorption coefficient for all six walls. Impulse
responses come from the image-source method with windowed-sinc fractional delays;
a mixture is target plus level-matched interferer plus white noise, each convolved
with its own impulse response, and the training reference is the target's
early-reverberated image at the microphone nearer to it.
"""

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from loguru import logger
from scipy import signal
from tqdm import tqdm

from .beamform import check_azimuth
from .constants import DEFAULT_SAMPLE_RATE, MIC_SPACING, MIN_SEPARATION, SPEED_OF_SOUND
from .errors import AudioFormatError, ConfigurationError, GeometryError, SilentSignalError
from .signal_core import MultiChannelWaveform, Waveform
from .wavio import read_wav, write_wav

# Sampling ranges for simulated scenes
WIDTH_RANGE = (2.5, 5.0)  # m
LENGTH_RANGE = (3.0, 9.0)  # m
HEIGHT_RANGE = (2.2, 3.5)  # m
T60_RANGE = (0.2, 0.5)  # s
SNR_RANGE = (-5.0, 10.0)  # dB
SOURCE_DISTANCE_RANGE = (1.0, 2.5)  # m
SOURCE_HEIGHT_RANGE = (1.2, 1.9)  # m
FIXED_TARGET_RANGE = (85.0, 95.0)  # degrees
ARRAY_HEIGHT = 1.5  # m
ARRAY_JITTER = 0.5  # m
WALL_CLEARANCE = 0.1  # m
SABINE_CONSTANT = 0.1611  # s/m
SINC_TAPS = 81
EARLY_CUTOFF_MS = 150.0
NOISE_LEVEL_DB = -30.0
DATASET_KINDS = ("fixed", "variable")
# Scene seed stream per split so held-out rooms and placements never repeat training ones
SCENE_STREAMS = {"train": 11, "heldout": 12}


@dataclass(frozen=True)
class RoomSpec:
    """Shoebox room; dimensions in metres, reverberation time in seconds."""

    width: float
    length: float
    height: float
    t60: float

    def __post_init__(self):
        for name in ("width", "length", "height", "t60"):
            if not getattr(self, name) > 0:
                raise GeometryError(f"Room {name} must be positive, got {getattr(self, name)}")

    @property
    def dimensions(self):
        """``[width, length, height]`` in metres."""
        return np.array([self.width, self.length, self.height])

    @property
    def volume(self):
        """Volume in cubic metres."""
        return self.width * self.length * self.height

    @property
    def surface_area(self):
        """Total wall, floor and ceiling area in square metres."""
        return 2.0 * (self.width * self.length + self.width * self.height + self.length * self.height)

    def contains(self, point, clearance=0.0):
        """Whether ``point`` lies at least ``clearance`` metres inside every wall."""
        point = np.asarray(point, dtype=np.float64)
        return bool(np.all(point >= clearance) and np.all(point <= self.dimensions - clearance))


@dataclass(frozen=True, eq=False)
class ArrayGeometry:
    """Two microphones on a horizontal axis.

    ``axis`` is the unit vector from the array centre toward microphone 1 (the 0°
    side); azimuth 90° (broadside) points along ``broadside_axis``.
    """

    center: np.ndarray
    axis: np.ndarray
    spacing: float = MIC_SPACING

    def __post_init__(self):
        center = np.asarray(self.center, dtype=np.float64)
        axis = np.asarray(self.axis, dtype=np.float64)
        if center.shape != (3,) or axis.shape != (3,):
            raise GeometryError("Array center and axis must be 3-D points")
        if abs(axis[2]) > 1e-12 or not np.isclose(np.linalg.norm(axis), 1.0, atol=1e-12):
            raise GeometryError(f"Array axis must be a horizontal unit vector, got {axis.tolist()}")
        if not self.spacing > 0:
            raise GeometryError(f"Microphone spacing must be positive, got {self.spacing}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "axis", axis)

    @classmethod
    def at(cls, center, yaw_degrees=0.0, spacing=MIC_SPACING):
        """Array centred at ``center`` with its axis rotated ``yaw_degrees`` in the horizontal plane."""
        yaw = np.deg2rad(yaw_degrees)
        return cls(center, np.array([np.cos(yaw), np.sin(yaw), 0.0]), spacing)

    @property
    def broadside_axis(self):
        """Horizontal unit vector toward azimuth 90 degrees."""
        return np.array([-self.axis[1], self.axis[0], 0.0])

    @property
    def mic_positions(self):
        """``[2, 3]`` array; row 0 is microphone 1."""
        half = 0.5 * self.spacing * self.axis
        return np.stack([self.center + half, self.center - half])

    def direction(self, azimuth):
        """Horizontal unit vector at ``azimuth`` degrees."""
        theta = np.deg2rad(azimuth)
        return np.cos(theta) * self.axis + np.sin(theta) * self.broadside_axis

    def azimuth_of(self, point):
        """Azimuth in degrees of ``point`` projected onto the horizontal plane."""
        offset = np.asarray(point, dtype=np.float64) - self.center
        return float(np.rad2deg(np.arctan2(offset @ self.broadside_axis, offset @ self.axis)))

    def to_dict(self):
        """JSON-ready form."""
        return {"center": self.center.tolist(), "axis": self.axis.tolist(), "spacing": self.spacing}

    @classmethod
    def from_dict(cls, data):
        """Inverse of :meth:`to_dict`."""
        return cls(np.array(data["center"]), np.array(data["axis"]), data["spacing"])


@dataclass(frozen=True, eq=False)
class SourcePlacement:
    """Point source at ``azimuth`` degrees, ``distance`` metres from the array centre."""

    azimuth: float
    distance: float
    height: float
    position: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.azimuth <= 180.0:
            raise GeometryError(f"Source azimuth must lie in [0, 180], got {self.azimuth}")
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))

    @classmethod
    def place(cls, room, array, azimuth, distance, height):
        """Place a source, pulling it toward the array if it would sit within the wall clearance."""
        direction = array.direction(azimuth)
        low = WALL_CLEARANCE - array.center[:2]
        high = room.dimensions[:2] - WALL_CLEARANCE - array.center[:2]
        reach = np.inf
        for d, lo, hi in zip(direction[:2], low, high):
            if d > 1e-12:
                reach = min(reach, hi / d)
            elif d < -1e-12:
                reach = min(reach, lo / d)
        distance = float(min(distance, reach))
        if distance <= 0:
            raise GeometryError(f"Array centre {array.center.tolist()} leaves no room for a source at {azimuth} deg")
        position = array.center + distance * direction
        position[2] = height
        return cls(float(azimuth), distance, float(height), position)

    def to_dict(self):
        """JSON-ready form."""
        return {
            "azimuth": self.azimuth,
            "distance": self.distance,
            "height": self.height,
            "position": self.position.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        """Inverse of :meth:`to_dict`."""
        return cls(data["azimuth"], data["distance"], data["height"], np.array(data["position"]))


@dataclass(eq=False)
class Rir:
    """Per-microphone impulse responses ``taps[mic, n]``.

    ``direct_delay`` holds the geometric direct-path delay of each microphone in
    (fractional) samples when it is known.
    """

    taps: np.ndarray
    sample_rate: int
    direct_delay: np.ndarray | None = None

    def __post_init__(self):
        self.taps = np.atleast_2d(np.asarray(self.taps, dtype=np.float64))
        if not np.all(np.isfinite(self.taps)):
            raise GeometryError("Impulse response contains NaN or Inf taps")
        if self.direct_delay is not None:
            self.direct_delay = np.atleast_1d(np.asarray(self.direct_delay, dtype=np.float64))
            if self.direct_delay.shape != (self.num_mics,):
                raise GeometryError(f"Expected {self.num_mics} direct-path delays, got {self.direct_delay.shape}")

    def direct_tap(self, channel=0):
        """Sample index where the direct path of ``channel`` arrives.

        Uses the geometric delay when known. Otherwise the largest tap, which is
        only reliable without reflections.
        """
        if self.direct_delay is not None:
            return int(np.floor(self.direct_delay[channel]))
        return int(np.argmax(np.abs(self.taps[channel])))

    @property
    def num_mics(self):
        """Number of microphones."""
        return self.taps.shape[0]

    def __len__(self):
        return self.taps.shape[1]


@dataclass(frozen=True, eq=False)
class SceneSpec:
    """One simulated recording situation."""

    room: RoomSpec
    array: ArrayGeometry
    target: SourcePlacement
    interferer: SourcePlacement
    snr_db: float
    seed: int
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        if self.target.azimuth == self.interferer.azimuth:
            raise GeometryError(f"Target and interferer share azimuth {self.target.azimuth}")
        for label, point in (("target", self.target.position), ("interferer", self.interferer.position)):
            if not self.room.contains(point, WALL_CLEARANCE - 1e-9):
                raise GeometryError(f"{label} at {point.tolist()} is not {WALL_CLEARANCE} m inside the room")
        for point in self.array.mic_positions:
            if not self.room.contains(point):
                raise GeometryError(f"Microphone at {point.tolist()} is outside the room")

    def to_dict(self):
        """JSON-ready form."""
        return {
            "room": {"width": self.room.width, "length": self.room.length, "height": self.room.height, "t60": self.room.t60},
            "array": self.array.to_dict(),
            "target": self.target.to_dict(),
            "interferer": self.interferer.to_dict(),
            "snr_db": self.snr_db,
            "seed": self.seed,
            "sample_rate": self.sample_rate,
        }

    @classmethod
    def from_dict(cls, data):
        """Inverse of :meth:`to_dict`."""
        return cls(
            room=RoomSpec(**data["room"]),
            array=ArrayGeometry.from_dict(data["array"]),
            target=SourcePlacement.from_dict(data["target"]),
            interferer=SourcePlacement.from_dict(data["interferer"]),
            snr_db=data["snr_db"],
            seed=int(data["seed"]),
            sample_rate=int(data["sample_rate"]),
        )


@dataclass(eq=False)
class MixtureExample:
    """Two-microphone mixture with its early-reverberated near-mic target."""

    mixture: MultiChannelWaveform
    target_reference: Waveform
    metadata: SceneSpec

    def __post_init__(self):
        if len(self.target_reference) != len(self.mixture):
            raise AudioFormatError(
                f"Reference has {len(self.target_reference)} samples, mixture has {len(self.mixture)}"
            )


# --------------------------------------------------
# Rooms and impulse responses
# --------------------------------------------------


def sample_room(rng_seed):
    """Draw a room uniformly from the simulation ranges."""
    rng = np.random.default_rng(rng_seed)
    return RoomSpec(
        width=float(rng.uniform(*WIDTH_RANGE)),
        length=float(rng.uniform(*LENGTH_RANGE)),
        height=float(rng.uniform(*HEIGHT_RANGE)),
        t60=float(rng.uniform(*T60_RANGE)),
    )


def sabine_absorption(room):
    """Wall absorption giving ``room.t60`` under Sabine's formula."""
    alpha = SABINE_CONSTANT * room.volume / (room.t60 * room.surface_area)
    if alpha > 1.0:
        logger.warning(f"Room {room.width:.2f}x{room.length:.2f}x{room.height:.2f} m is too small for T60 {room.t60} s")
        return 1.0
    return alpha


def wall_absorption(room, model="eyring"):
    """Wall absorption for the simulator; Eyring's law matches image-source decay."""
    if model == "sabine":
        return sabine_absorption(room)
    if model != "eyring":
        raise ConfigurationError(f"Unknown absorption model {model!r}")
    return float(-np.expm1(-SABINE_CONSTANT * room.volume / (room.surface_area * room.t60)))


def rir_length(room, sample_rate):
    """Taps needed for 60 dB of decay."""
    return int(np.ceil(room.t60 * sample_rate))


def default_max_order(room):
    """Reflection order whose images still arrive within one T60."""
    reach = SPEED_OF_SOUND * room.t60
    return int(np.ceil(reach * np.sum(1.0 / room.dimensions)))


def _axis_images(size, coord, reach):
    """Image coordinates along one axis with their reflection counts."""
    n_max = int(np.ceil(reach / (2.0 * size))) + 1
    n = np.arange(-n_max, n_max + 1)
    coords = np.concatenate([2 * n * size + coord, 2 * n * size - coord])
    reflections = np.concatenate([np.abs(2 * n), np.abs(2 * n - 1)])
    return coords, reflections


def image_source_rir(room, array, src, max_order=None, sample_rate=DEFAULT_SAMPLE_RATE, absorption=None, n_taps=None):
    """Image-source impulse responses from ``src`` to both microphones.

    Each image ``r`` reflections away contributes ``beta**r / (4*pi*d)`` at delay
    ``d / c`` through an 81-tap Hann-windowed sinc, with ``beta = sqrt(1 - alpha)``.

    Args:
        max_order: Highest total reflection count; defaults to :func:`default_max_order`.
        absorption: Wall absorption; defaults to ``wall_absorption(room)``.
        n_taps: Response length; defaults to :func:`rir_length`.
    """
    position = np.asarray(src.position if isinstance(src, SourcePlacement) else src, dtype=np.float64)
    if not room.contains(position):
        raise GeometryError(f"Source at {position.tolist()} is outside the room")
    mics = array.mic_positions
    for mic in mics:
        if not room.contains(mic):
            raise GeometryError(f"Microphone at {mic.tolist()} is outside the room")
    if max_order is None:
        max_order = default_max_order(room)
    if max_order < 0:
        raise ConfigurationError(f"max_order must be >= 0, got {max_order}")
    alpha = wall_absorption(room) if absorption is None else absorption
    beta = np.sqrt(1.0 - alpha)
    n_taps = n_taps or rir_length(room, sample_rate)
    half = SINC_TAPS // 2
    reach = (n_taps + half) * SPEED_OF_SOUND / sample_rate

    images = [_axis_images(size, coord, reach) for size, coord in zip(room.dimensions, position)]
    (xs, rx), (ys, ry), (zs, rz) = images
    order = rx[:, None, None] + ry[None, :, None] + rz[None, None, :]
    taps = np.zeros((len(mics), n_taps))
    offsets = np.arange(-half, half + 1)
    for m, mic in enumerate(mics):
        dist = np.sqrt(
            ((xs - mic[0]) ** 2)[:, None, None] + ((ys - mic[1]) ** 2)[None, :, None] + ((zs - mic[2]) ** 2)[None, None, :]
        )
        keep = (order <= max_order) & (dist <= reach)
        d = dist[keep]
        gain = beta ** order[keep] / (4.0 * np.pi * d)
        delay = d / SPEED_OF_SOUND * sample_rate
        base = np.floor(delay).astype(np.int64)
        for k in offsets:
            index = base + k
            frac = index - delay
            weight = gain * np.sinc(frac) * 0.5 * (1.0 + np.cos(np.pi * frac / (half + 1)))
            valid = (index >= 0) & (index < n_taps)
            taps[m] += np.bincount(index[valid], weights=weight[valid], minlength=n_taps)
    logger.debug(f"Image-source RIR: {n_taps} taps, alpha {alpha:.3f}, order <= {max_order}")
    direct = np.linalg.norm(mics - position, axis=1) / SPEED_OF_SOUND * sample_rate
    return Rir(taps, sample_rate, direct)


def schroeder_t60(taps, sample_rate, fit_range=(-5.0, -25.0)):
    """Reverberation time from the backward-integrated energy decay curve.

    The decay between the two ``fit_range`` levels (dB) is fit with a line and
    extrapolated to 60 dB.
    """
    energy = energy_decay_curve(taps)
    if energy[0] <= 0:
        raise SilentSignalError("Impulse response has no energy")
    with np.errstate(divide="ignore"):
        decay = 10.0 * np.log10(energy / energy[0])
    upper, lower = fit_range
    start = int(np.argmax(decay <= upper))
    stop = int(np.argmax(decay <= lower))
    if decay[stop] > lower or stop <= start + 1:
        raise ConfigurationError(f"Impulse response does not decay by {-lower} dB")
    t = np.arange(start, stop) / sample_rate
    slope, _ = np.polyfit(t, decay[start:stop], 1)
    return float(-60.0 / slope)


def energy_decay_curve(taps):
    """Backward-integrated energy of ``taps``."""
    return np.cumsum(np.asarray(taps, dtype=np.float64)[::-1] ** 2)[::-1]


# --------------------------------------------------
# Mixtures
# --------------------------------------------------


def _convolve(x, taps, length):
    return signal.fftconvolve(x, taps)[:length]


def early_reverb_target(target_speech, rir, cutoff_ms=EARLY_CUTOFF_MS, channel=0):
    """Source convolved with one microphone's RIR cut ``cutoff_ms`` after the direct path."""
    if not cutoff_ms > 0:
        raise ConfigurationError(f"cutoff_ms must be positive, got {cutoff_ms}")
    taps = rir.taps[channel].copy()
    direct = rir.direct_tap(channel)
    cutoff = int(round(cutoff_ms * rir.sample_rate / 1000.0))
    taps[direct + cutoff :] = 0.0
    samples = np.asarray(target_speech.samples, dtype=np.float64)
    return Waveform(_convolve(samples, taps, len(samples)), target_speech.sample_rate)


def synthesize_example(scene, target_speech, interferer_speech, noise_level_db=NOISE_LEVEL_DB):
    """Render ``scene`` into a two-microphone mixture and its training reference.

    The interferer is scaled so that target-to-interferer energy at the near
    microphone, measured on early-reverberated components, equals ``scene.snr_db``.
    ``interferer_speech=None`` or ``noise_level_db=None`` leaves that term out.
    """
    from .features import near_mic_select

    fs = scene.sample_rate
    for label, w in (("target", target_speech), ("interferer", interferer_speech)):
        if w is not None and w.sample_rate != fs:
            raise AudioFormatError(f"{label} speech is {w.sample_rate} Hz, scene is {fs} Hz")
    if target_speech.energy() == 0:
        raise SilentSignalError("Target speech has zero energy")

    length = len(target_speech) if interferer_speech is None else min(len(target_speech), len(interferer_speech))
    target = Waveform(target_speech.samples[:length], fs)
    near = near_mic_select(scene.target.azimuth) - 1

    rir_t = image_source_rir(scene.room, scene.array, scene.target, sample_rate=fs)
    mixture = np.stack([_convolve(target.samples, taps, length) for taps in rir_t.taps])
    reference = early_reverb_target(target, rir_t, channel=near)
    if reference.energy() == 0:
        raise SilentSignalError("Early-reverberated target has zero energy")

    if interferer_speech is not None:
        interferer = Waveform(interferer_speech.samples[:length], fs)
        rir_i = image_source_rir(scene.room, scene.array, scene.interferer, sample_rate=fs)
        early_i = early_reverb_target(interferer, rir_i, channel=near)
        if early_i.energy() > 0:
            gain = np.sqrt(reference.energy() / (early_i.energy() * 10.0 ** (scene.snr_db / 10.0)))
            mixture = mixture + gain * np.stack([_convolve(interferer.samples, taps, length) for taps in rir_i.taps])

    if noise_level_db is not None:
        rng = np.random.default_rng(scene.seed)
        noise_power = reference.energy() / length * 10.0 ** (noise_level_db / 10.0)
        mixture = mixture + np.sqrt(noise_power) * rng.standard_normal(mixture.shape)

    return MixtureExample(MultiChannelWaveform.from_array(mixture, fs), reference, scene)


def _sample_azimuths(rng, kind, target=None):
    if kind == "fixed":
        draw = float(rng.uniform(*FIXED_TARGET_RANGE))
        target = draw if target is None else target
        while True:
            interferer = float(rng.uniform(0.0, 180.0))
            if abs(interferer - target) >= MIN_SEPARATION:
                return target, interferer
    draw = float(rng.uniform(0.0, 180.0))
    target = draw if target is None else target
    sides = [s for s in (1.0, -1.0) if 0.0 <= target + s * MIN_SEPARATION <= 180.0]
    return target, target + sides[int(rng.integers(len(sides)))] * MIN_SEPARATION


def sample_scene(rng, kind, sample_rate=DEFAULT_SAMPLE_RATE, target_azimuth=None, interferer_azimuth=None, snr_db=None):
    """Draw a complete scene; any of the angles or the SNR may be pinned."""
    if kind not in DATASET_KINDS:
        raise ConfigurationError(f"Unknown dataset kind {kind!r}; expected one of {DATASET_KINDS}")
    room = sample_room(int(rng.integers(2**63)))
    center = np.array([room.width / 2, room.length / 2, ARRAY_HEIGHT])
    center[:2] += rng.uniform(-ARRAY_JITTER, ARRAY_JITTER, size=2)
    array = ArrayGeometry.at(center, yaw_degrees=float(rng.uniform(0.0, 360.0)))

    pinned = None if target_azimuth is None else check_azimuth(target_azimuth, "target angle")
    target_az, interferer_az = _sample_azimuths(rng, kind, pinned)
    interferer_az = interferer_az if interferer_azimuth is None else float(interferer_azimuth)
    snr = float(rng.uniform(*SNR_RANGE)) if snr_db is None else float(snr_db)

    placements = [
        SourcePlacement.place(
            room, array, az, float(rng.uniform(*SOURCE_DISTANCE_RANGE)), float(rng.uniform(*SOURCE_HEIGHT_RANGE))
        )
        for az in (target_az, interferer_az)
    ]
    return SceneSpec(room, array, placements[0], placements[1], snr, int(rng.integers(2**63)), sample_rate)


def _excerpt(rng, w, n_samples):
    if n_samples is None or len(w) <= n_samples:
        return w
    start = int(rng.integers(len(w) - n_samples + 1))
    return Waveform(w.samples[start : start + n_samples], w.sample_rate)


def _pick_speech(rng, speech_pool, n_samples):
    first = int(rng.integers(len(speech_pool)))
    second = int(rng.integers(len(speech_pool) - 1)) if len(speech_pool) > 1 else 0
    if len(speech_pool) > 1 and second >= first:
        second += 1
    return _excerpt(rng, speech_pool[first], n_samples), _excerpt(rng, speech_pool[second], n_samples)


def build_example(
    kind, index, rng_seed, speech_pool, duration=None, noise_level_db=NOISE_LEVEL_DB, split="train", **pins
):
    """Build example ``index`` of a dataset; depends only on ``(rng_seed, split, index)``."""
    if split not in SCENE_STREAMS:
        raise ConfigurationError(f"Unknown split {split!r}; expected one of {sorted(SCENE_STREAMS)}")
    rng = np.random.default_rng([rng_seed, SCENE_STREAMS[split], index])
    sample_rate = speech_pool[0].sample_rate
    scene = sample_scene(rng, kind, sample_rate, **pins)
    n_samples = None if duration is None else int(round(duration * sample_rate))
    target, interferer = _pick_speech(rng, speech_pool, n_samples)
    return synthesize_example(scene, target, interferer, noise_level_db)


def build_dataset(
    kind, count, rng_seed, speech_pool, duration=None, workers=1, noise_level_db=NOISE_LEVEL_DB, split="train"
):
    """Simulate ``count`` examples.

    ``fixed`` keeps the target within 85-95 degrees with the interferer anywhere at
    least 15 degrees away; ``variable`` puts the target anywhere and the interferer
    exactly 15 degrees to one side. Results do not depend on ``workers``; the
    ``train`` and ``heldout`` splits draw scenes from disjoint seed streams.
    """
    if kind not in DATASET_KINDS:
        raise ConfigurationError(f"Unknown dataset kind {kind!r}; expected one of {DATASET_KINDS}")
    if not speech_pool:
        raise ConfigurationError("Speech pool is empty")
    if count < 0:
        raise ConfigurationError(f"count must be >= 0, got {count}")

    def build(index):
        return build_example(kind, index, rng_seed, speech_pool, duration, noise_level_db, split)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        examples = list(tqdm(pool.map(build, range(count)), total=count, desc=f"simulate {kind}", disable=count < 2))
    logger.info(f"Built {count} {kind} {split} examples (seed {rng_seed})")
    return examples


# --------------------------------------------------
# Datasets on disk
# --------------------------------------------------

MANIFEST_NAME = "manifest.jsonl"


def write_dataset(examples, out_dir):
    """Write WAVs and a one-line-per-example JSON manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, ex in enumerate(examples):
        mixture_name = f"{i:05d}_mixture.wav"
        reference_name = f"{i:05d}_reference.wav"
        write_wav(out_dir / mixture_name, ex.mixture)
        write_wav(out_dir / reference_name, ex.target_reference)
        record = {
            "index": i,
            "mixture": mixture_name,
            "reference": reference_name,
            "seed": ex.metadata.seed,
            "scene": ex.metadata.to_dict(),
        }
        lines.append(json.dumps(record, sort_keys=True))
    manifest = out_dir / MANIFEST_NAME
    manifest.write_text("".join(line + "\n" for line in lines))
    logger.info(f"Wrote {len(lines)} examples to {out_dir}")
    return manifest


def load_dataset(path):
    """Read a dataset written by :func:`write_dataset` (directory or manifest path)."""
    path = Path(path)
    manifest = path / MANIFEST_NAME if path.is_dir() else path
    if not manifest.exists():
        raise FileNotFoundError(f"Dataset manifest not found: {manifest}")
    examples = []
    for number, line in enumerate(manifest.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            scene = SceneSpec.from_dict(record["scene"])
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise ConfigurationError(f"{manifest}:{number}: malformed manifest record ({e})") from e
        mixture = read_wav(manifest.parent / record["mixture"]).require_stereo()
        reference = read_wav(manifest.parent / record["reference"]).channels[0]
        examples.append(MixtureExample(mixture, reference, scene))
    logger.info(f"Loaded {len(examples)} examples from {manifest.parent}")
    return examples
