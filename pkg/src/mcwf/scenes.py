"""Synthetic far-field two-microphone scene generation.

A point source at one of 13 azimuths (-90..90 degrees in 15-degree steps)
reaches each microphone through a fractional plane-wave delay realized by
a 32-tap Kaiser-windowed sinc kernel. Diffuse noise plays distinct dry
segments from all 13 azimuths simultaneously. Mixtures are produced at an
exact reference-channel SNR, optionally after a Beta-drawn convex
combination of two noise materials and an exponentially decaying
synthetic reverb tail.

Every scene is described by a JSON-serializable manifest; regenerating
from an identical manifest is bit-identical. All randomness flows from the
manifest seed through named sub-streams.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .errors import CountMismatch, DomainError, NonFiniteInput, ShapeMismatch, ZeroEnergy

__all__ = [
    "AZIMUTHS_DEG",
    "TimeSignal",
    "ArrayGeometry",
    "SceneManifest",
    "Scene",
    "substream",
    "point_source_image",
    "diffuse_noise",
    "mix_at_snr",
    "augment_noise",
    "synth_reverb_tail",
    "make_dry_source",
    "generate_scene",
    "random_manifest",
]

AZIMUTHS_DEG = tuple(range(-90, 91, 15))  # 13 points
MANIFEST_SCHEMA_VERSION = 1

_DELAY_TAPS = 32
_KAISER_BETA = 8.6


def substream(seed: int, name: str) -> np.random.Generator:
    """Named deterministic sub-stream of a master seed."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode())]))


@dataclass
class TimeSignal:
    """(samples, channels) float64 waveform at a fixed rate."""

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim == 1:
            self.samples = self.samples[:, None]
        if self.samples.ndim != 2:
            raise ShapeMismatch(f"samples must be (n,) or (n, K), got {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise NonFiniteInput("time signal contains non-finite samples")

    @property
    def num_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def num_channels(self) -> int:
        return self.samples.shape[1]


def _default_mics() -> np.ndarray:
    # two microphones 3 cm apart on the x-axis, centered at the origin
    return np.array([[-0.015, 0.0, 0.0], [0.015, 0.0, 0.0]])


@dataclass
class ArrayGeometry:
    mic_positions: np.ndarray = field(default_factory=_default_mics)
    speed_of_sound: float = 343.0

    def __post_init__(self):
        self.mic_positions = np.asarray(self.mic_positions, dtype=np.float64)
        if self.mic_positions.ndim != 2 or self.mic_positions.shape[1] != 3:
            raise ShapeMismatch("mic_positions must be (K, 3) meters")
        k = self.mic_positions.shape[0]
        if k < 1:
            raise CountMismatch("need at least one microphone")
        for i in range(k):
            for j in range(i + 1, k):
                if np.linalg.norm(self.mic_positions[i] - self.mic_positions[j]) <= 0:
                    raise DomainError("two microphones share a position")

    @property
    def num_mics(self) -> int:
        return self.mic_positions.shape[0]


def _fractional_delay_kernel(delay: float) -> tuple[np.ndarray, int]:
    """Kaiser-windowed sinc kernel delaying by ``delay`` samples.

    Returns (taps, advance): convolving 'full' and dropping the first
    ``advance`` outputs realizes the delay with unit DC gain.
    """
    center = _DELAY_TAPS // 2 - 1  # 15 for 32 taps; |delay| must stay well below it
    if abs(delay) > center - 2:
        raise DomainError(f"fractional delay {delay:.2f} outside kernel support")
    n = np.arange(_DELAY_TAPS)
    h = np.sinc(n - center - delay) * np.kaiser(_DELAY_TAPS, _KAISER_BETA)
    return h / h.sum(), center


def point_source_image(dry: TimeSignal, azimuth_deg: float, geom: ArrayGeometry) -> TimeSignal:
    """Far-field plane-wave image of a mono source at the array.

    Azimuth 0 is broadside (the +y axis); +-90 is endfire along the
    microphone axis. Per-microphone delays are relative to the array
    origin; unit gain.
    """
    if abs(azimuth_deg) > 90.0:
        raise DomainError(f"azimuth {azimuth_deg} outside [-90, 90]")
    if dry.num_channels != 1:
        raise ShapeMismatch("dry source must be single-channel")
    az = np.deg2rad(azimuth_deg)
    direction = np.array([np.sin(az), np.cos(az), 0.0])
    x = dry.samples[:, 0]
    n = x.size
    out = np.zeros((n, geom.num_mics))
    for k in range(geom.num_mics):
        # arrival at a mic closer to the source leads the origin
        delay_s = -float(geom.mic_positions[k] @ direction) / geom.speed_of_sound
        delay = delay_s * dry.sample_rate
        taps, advance = _fractional_delay_kernel(delay)
        full = np.convolve(x, taps)
        out[:, k] = full[advance : advance + n]
    return TimeSignal(out, dry.sample_rate)


def diffuse_noise(noise_sources, geom: ArrayGeometry) -> TimeSignal:
    """Sum of point-source images over all 13 azimuths with equal gains."""
    if len(noise_sources) != len(AZIMUTHS_DEG):
        raise CountMismatch(
            f"diffuse noise needs {len(AZIMUTHS_DEG)} sources, got {len(noise_sources)}"
        )
    total = None
    for src, az in zip(noise_sources, AZIMUTHS_DEG):
        image = point_source_image(src, az, geom)
        total = image.samples if total is None else total + image.samples
    return TimeSignal(total, noise_sources[0].sample_rate)


def mix_at_snr(speech: TimeSignal, noise: TimeSignal, snr_db: float, ref_channel: int = 0):
    """Scale the noise so the reference-channel SNR is exactly ``snr_db``.

    Returns (mixture, speech, scaled noise); mixture = speech + noise
    holds bitwise.
    """
    if speech.samples.shape != noise.samples.shape or speech.sample_rate != noise.sample_rate:
        raise ShapeMismatch("speech and noise must share shape and rate")
    es = float((speech.samples[:, ref_channel] ** 2).sum())
    en = float((noise.samples[:, ref_channel] ** 2).sum())
    if es <= 0.0 or en <= 0.0:
        raise ZeroEnergy("speech and noise must both have energy on the reference channel")
    gain = np.sqrt(es / (en * 10.0 ** (snr_db / 10.0)))
    scaled = TimeSignal(noise.samples * gain, noise.sample_rate)
    mixture = TimeSignal(speech.samples + scaled.samples, speech.sample_rate)
    return mixture, speech, scaled


def augment_noise(n0: TimeSignal, n1: TimeSignal, alpha: float) -> TimeSignal:
    """Convex combination alpha*n0 + (1-alpha)*n1."""
    if not 0.0 <= alpha <= 1.0:
        raise DomainError(f"alpha {alpha} outside [0, 1]")
    if n0.samples.shape != n1.samples.shape:
        raise ShapeMismatch("noise shapes differ")
    return TimeSignal(alpha * n0.samples + (1.0 - alpha) * n1.samples, n0.sample_rate)


def synth_reverb_tail(image: TimeSignal, rt60_ms: float, seed: int) -> TimeSignal:
    """Convolve with a unit direct path plus a seeded exponentially decaying
    white-noise tail whose energy envelope drops 60 dB at ``rt60_ms``."""
    if rt60_ms < 0:
        raise DomainError("rt60 must be nonnegative")
    if rt60_ms == 0:
        return TimeSignal(image.samples * 1.0, image.sample_rate)
    n60 = rt60_ms * 1e-3 * image.sample_rate
    gamma = 3.0 * np.log(10.0) / n60  # energy exp(-2*gamma*n) hits -60 dB at n60
    length = int(round(1.2 * n60))
    rng = substream(seed, "reverb-tail")
    n = np.arange(1, length + 1)
    ir = np.concatenate([[1.0], 0.4 * rng.standard_normal(length) * np.exp(-gamma * n)])
    out = np.empty_like(image.samples)
    for k in range(image.num_channels):
        out[:, k] = np.convolve(image.samples[:, k], ir)[: image.num_samples]
    return TimeSignal(out, image.sample_rate)


# ---------------------------------------------------------------------------
# dry source materials


def _ar2_coeffs(center_hz: float, radius: float, sample_rate: int):
    theta = 2.0 * np.pi * center_hz / sample_rate
    return np.array([1.0, -2.0 * radius * np.cos(theta), radius**2])


_PINK_B = np.array([0.049922035, -0.095993537, 0.050612699, -0.004408786])
_PINK_A = np.array([1.0, -2.494956002, 2.017265875, -0.522189400])


def make_dry_source(spec: dict, rng: np.random.Generator, num_samples: int, sample_rate: int) -> TimeSignal:
    """Synthesize a dry mono source from its manifest spec.

    Kinds: 'speech_like' (AR(2)-resonant noise with an on/off envelope),
    'white', 'pink', and 'wav' (a single-channel file reference).
    """
    kind = spec.get("kind", "speech_like")
    if kind == "wav":
        from .audio import read_wav

        ts = read_wav(spec["path"])
        if ts.sample_rate != sample_rate:
            from .errors import RateMismatch

            raise RateMismatch(f"{spec['path']}: {ts.sample_rate} Hz, expected {sample_rate}")
        x = ts.samples[:, spec.get("channel", 0)]
        if x.size < num_samples:
            reps = int(np.ceil(num_samples / x.size))
            x = np.tile(x, reps)
        return TimeSignal(x[:num_samples], sample_rate)
    if kind == "white":
        return TimeSignal(rng.standard_normal(num_samples), sample_rate)
    if kind == "pink":
        x = lfilter(_PINK_B, _PINK_A, rng.standard_normal(num_samples))
        return TimeSignal(x / max(np.abs(x).max(), 1e-12), sample_rate)
    if kind == "speech_like":
        center = spec.get("center_hz", 400.0 + 600.0 * rng.random())
        x = lfilter([1.0], _ar2_coeffs(center, 0.97, sample_rate), rng.standard_normal(num_samples))
        # on/off syllable-like envelope, smoothed to avoid clicks
        env = np.zeros(num_samples)
        pos = 0
        while pos < num_samples:
            on = int(rng.uniform(0.08, 0.25) * sample_rate)
            off = int(rng.uniform(0.02, 0.12) * sample_rate)
            env[pos : pos + on] = 1.0
            pos += on + off
        smooth = int(0.008 * sample_rate)
        if smooth > 1:
            kernel = np.hanning(smooth)
            env = np.convolve(env, kernel / kernel.sum(), mode="same")
        x = x * (0.1 + 0.9 * env)
        return TimeSignal(x / max(np.abs(x).max(), 1e-12), sample_rate)
    raise DomainError(f"unknown dry source kind '{kind}'")


# ---------------------------------------------------------------------------
# manifests and scene generation


@dataclass
class SceneManifest:
    """Everything needed to regenerate one mixture bit-exactly."""

    speech_source: dict
    azimuth: float
    snr_db: float
    noise_components: list
    seed: int
    augment_alpha: float | None = None
    reverb_tail: dict | None = None
    duration_s: float = 2.0
    sample_rate: int = 16000
    schema_version: int = MANIFEST_SCHEMA_VERSION

    def __post_init__(self):
        if self.azimuth not in AZIMUTHS_DEG:
            raise DomainError(f"azimuth {self.azimuth} not on the 13-point grid {AZIMUTHS_DEG}")
        if self.augment_alpha is not None and not 0.0 <= self.augment_alpha <= 1.0:
            raise DomainError("augment_alpha outside [0, 1]")
        if not self.noise_components:
            raise CountMismatch("at least one noise component is required")

    def to_json(self) -> str:
        doc = {
            "schema_version": self.schema_version,
            "speech_source": self.speech_source,
            "azimuth": self.azimuth,
            "snr_db": self.snr_db,
            "noise_components": self.noise_components,
            "augment_alpha": self.augment_alpha,
            "reverb_tail": self.reverb_tail,
            "seed": self.seed,
            "duration_s": self.duration_s,
            "sample_rate": self.sample_rate,
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SceneManifest":
        doc = json.loads(text)
        version = doc.pop("schema_version", None)
        if version != MANIFEST_SCHEMA_VERSION:
            raise DomainError(f"unsupported manifest schema version {version}")
        return cls(schema_version=version, seed=doc.pop("seed", 0), **doc)

    @property
    def num_samples(self) -> int:
        return int(round(self.duration_s * self.sample_rate))


@dataclass
class Scene:
    mixture: TimeSignal
    speech: TimeSignal
    noise: TimeSignal
    manifest: SceneManifest


def _component_diffuse(
    component: dict, manifest: SceneManifest, geom: ArrayGeometry, stream_tag: str
) -> TimeSignal:
    """Diffuse field of one noise component: 13 distinct dry segments."""
    n = manifest.num_samples
    sources = []
    for j in range(len(AZIMUTHS_DEG)):
        rng = substream(manifest.seed, f"{stream_tag}-az{j}")
        sources.append(make_dry_source(component["source"], rng, n, manifest.sample_rate))
    image = diffuse_noise(sources, geom)
    return TimeSignal(image.samples * component.get("gain", 1.0), manifest.sample_rate)


def generate_scene(manifest: SceneManifest, geom: ArrayGeometry | None = None) -> Scene:
    """Deterministically synthesize the mixture described by a manifest."""
    geom = geom or ArrayGeometry()
    n = manifest.num_samples

    speech_rng = substream(manifest.seed, "speech")
    dry = make_dry_source(manifest.speech_source, speech_rng, n, manifest.sample_rate)
    speech = point_source_image(dry, manifest.azimuth, geom)

    components = [
        _component_diffuse(c, manifest, geom, f"noise{i}")
        for i, c in enumerate(manifest.noise_components)
    ]
    if manifest.augment_alpha is not None:
        if len(components) != 2:
            raise CountMismatch("augment_alpha requires exactly two noise components")
        noise = augment_noise(components[0], components[1], manifest.augment_alpha)
    else:
        total = components[0].samples.copy()
        for c in components[1:]:
            total += c.samples
        noise = TimeSignal(total, manifest.sample_rate)

    if manifest.reverb_tail is not None:
        rt60 = manifest.reverb_tail["rt60_ms"]
        tail_seed = manifest.reverb_tail.get("seed", manifest.seed)
        speech = synth_reverb_tail(speech, rt60, tail_seed)
        noise = synth_reverb_tail(noise, rt60, tail_seed + 1)

    mixture, speech, noise = mix_at_snr(speech, noise, manifest.snr_db)
    return Scene(mixture, speech, noise, manifest)


def random_manifest(
    rng: np.random.Generator,
    seed: int,
    snr_db: float | None = None,
    snr_range=(-6.0, 12.0),
    duration_s: float = 2.0,
    augment: bool = False,
    reverb_rt60_ms: float | None = None,
) -> SceneManifest:
    """Draw one scene description: random azimuth, SNR, and source material."""
    azimuth = float(rng.choice(AZIMUTHS_DEG))
    if snr_db is None:
        snr_db = float(rng.uniform(*snr_range))
    components = [{"source": {"kind": "pink"}, "gain": 1.0}]
    alpha = None
    if augment:
        components.append({"source": {"kind": "white"}, "gain": 1.0})
        alpha = float(rng.beta(2.0, 2.0))
    reverb = {"rt60_ms": reverb_rt60_ms, "seed": seed + 7} if reverb_rt60_ms else None
    return SceneManifest(
        speech_source={"kind": "speech_like", "center_hz": float(rng.uniform(300.0, 1200.0))},
        azimuth=azimuth,
        snr_db=snr_db,
        noise_components=components,
        augment_alpha=alpha,
        reverb_tail=reverb,
        seed=seed,
        duration_s=duration_s,
    )
