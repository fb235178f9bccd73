"""Synthetic labelled corpus: content tones, parametric noises, SNR mixing
and exponential-decay reverberation.

Everything here is a pure function of its parameters and an integer seed,
so utterances can be generated in any order (or in worker processes) and
still come out bit-identical.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import signal as sps

from .errors import DegenerateInputError, InvalidArgumentError, InvalidRecipeError

DEFAULT_SAMPLE_RATE = 16000

NOISE_TYPES = ("clean", "white", "street", "music", "reverb")
ADDITIVE_NOISE_TYPES = ("white", "street", "music")

STREET_CUTOFF_HZ = 1000.0
STREET_ORDER = 4
MUSIC_F0_RANGE = (110.0, 440.0)
MUSIC_HARMONICS = 4
MUSIC_NOTE_MS = 200.0

# 3*ln(10): amplitude falls by 60 dB over one RT60
DECAY_60DB = 3.0 * math.log(10.0)

_FORMANT_GRID = (
    (300.0, 450.0, 600.0, 800.0),
    (1000.0, 1350.0, 1700.0, 2100.0),
    (2500.0, 2850.0, 3200.0, 3600.0),
)
_FORMANT_AMPS = (1.0, 0.5, 0.25)
_FORMANT_JITTER = 0.03
_EXCITATION_STD = 0.05
_RAMP_MS = 5.0
_SYNTH_PEAK = 0.9


@dataclass(frozen=True)
class NoiseCondition:
    """Noise type plus its within-class level (SNR in dB or RT60 in s)."""

    noise_type: str
    snr_db: float | None = None
    rt60_s: float | None = None

    def __post_init__(self):
        if self.noise_type not in NOISE_TYPES:
            raise InvalidArgumentError(f"unknown noise type {self.noise_type!r}")
        if self.noise_type in ADDITIVE_NOISE_TYPES:
            if self.snr_db is None or self.rt60_s is not None:
                raise InvalidArgumentError(f"{self.noise_type} needs snr_db only")
        elif self.noise_type == "reverb":
            if self.rt60_s is None or self.rt60_s <= 0 or self.snr_db is not None:
                raise InvalidArgumentError("reverb needs a positive rt60_s only")
        elif self.snr_db is not None or self.rt60_s is not None:
            raise InvalidArgumentError("clean takes no level")

    @property
    def name(self) -> str:
        if self.noise_type in ADDITIVE_NOISE_TYPES:
            return f"{self.noise_type}({self.snr_db:02g})"
        if self.noise_type == "reverb":
            return f"reverb({self.rt60_s:g})"
        return "clean"

    @classmethod
    def parse(cls, text: str) -> "NoiseCondition":
        """Parse ``clean``, ``white:0``, ``reverb:0.6`` style strings."""
        kind, _, level = str(text).strip().partition(":")
        if kind in ADDITIVE_NOISE_TYPES:
            return cls(kind, snr_db=float(level))
        if kind == "reverb":
            return cls(kind, rt60_s=float(level))
        if level:
            raise InvalidArgumentError(f"bad noise condition {text!r}")
        return cls(kind)

    def to_string(self) -> str:
        if self.noise_type in ADDITIVE_NOISE_TYPES:
            return f"{self.noise_type}:{self.snr_db:g}"
        if self.noise_type == "reverb":
            return f"reverb:{self.rt60_s:g}"
        return "clean"


CLEAN = NoiseCondition("clean")


@dataclass
class Utterance:
    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE
    # (content_class, start_sample, end_sample), contiguous over the signal
    segments: list[tuple[int, int, int]] = field(default_factory=list)
    noise: NoiseCondition | None = None
    utt_id: str = ""

    def __len__(self):
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate

    def check(self):
        """Validate the segment table and sample values."""
        if not np.all(np.isfinite(self.samples)):
            raise InvalidArgumentError("non-finite samples")
        pos = 0
        for _, start, end in self.segments:
            if start != pos or end <= start:
                raise InvalidArgumentError("segments must be contiguous and non-empty")
            pos = end
        if self.segments and pos != len(self.samples):
            raise InvalidArgumentError("segments do not cover the utterance")


@dataclass(frozen=True)
class RoomImpulseResponse:
    taps: np.ndarray
    rt60_s: float
    sample_rate: int

    def envelope(self, n) -> np.ndarray:
        """Amplitude envelope of the decaying tail at tap index ``n``."""
        return np.exp(-DECAY_60DB * np.asarray(n, float) / (self.rt60_s * self.sample_rate))


# ---------------------------------------------------------------- clean speech


def class_formants(content_class: int, num_classes: int) -> tuple[float, float, float]:
    """Fixed formant frequencies (Hz) for one content class.

    Classes take distinct cells of a 4x4x4 frequency grid, so any two share
    at most two formants. The assignment is a fixed permutation that does
    not depend on any user seed.
    """
    if num_classes < 2 or num_classes > 64:
        raise InvalidArgumentError("content class count must be in [2, 64]")
    if not 0 <= content_class < num_classes:
        raise InvalidArgumentError("content class out of range")
    combos = list(itertools.product(*_FORMANT_GRID))
    order = np.random.default_rng(20170501).permutation(len(combos))
    return combos[order[content_class]]


def class_tone(content_class: int, num_classes: int, num_samples: int,
               sample_rate: int = DEFAULT_SAMPLE_RATE) -> np.ndarray:
    """Noise-free, jitter-free rendering of a class template."""
    t = np.arange(num_samples) / sample_rate
    freqs = class_formants(content_class, num_classes)
    return sum(a * np.sin(2 * np.pi * f * t) for a, f in zip(_FORMANT_AMPS, freqs))


def _segment_wave(rng: np.random.Generator, content_class: int, num_classes: int,
                  n: int, sample_rate: int) -> np.ndarray:
    t = np.arange(n) / sample_rate
    freqs = np.array(class_formants(content_class, num_classes))
    freqs = freqs * (1.0 + rng.uniform(-_FORMANT_JITTER, _FORMANT_JITTER, 3))
    phases = rng.uniform(0, 2 * np.pi, 3)
    amps = np.array(_FORMANT_AMPS) * rng.uniform(0.7, 1.0, 3)
    x = (amps[:, None] * np.sin(2 * np.pi * freqs[:, None] * t + phases[:, None])).sum(0)
    x += _EXCITATION_STD * rng.standard_normal(n)
    ramp = min(int(_RAMP_MS * 1e-3 * sample_rate), n // 2)
    if ramp > 0:
        win = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        x[:ramp] *= win
        x[n - ramp:] *= win[::-1]
    return x * rng.uniform(0.5, 1.0)


def synth_clean_utterance(seed: int, num_segments: int, segment_len_ms: float,
                          content_class_count: int,
                          sample_rate: int = DEFAULT_SAMPLE_RATE) -> Utterance:
    """Concatenate ``num_segments`` class-template segments drawn at random.

    Each segment renders its class formants with small random frequency
    jitter, random phases and gain, plus a low-level white excitation.
    """
    if content_class_count < 2:
        raise InvalidArgumentError("need at least two content classes")
    if num_segments <= 0 or segment_len_ms <= 0:
        raise InvalidArgumentError("segment count and length must be positive")
    if segment_len_ms < 25:
        raise InvalidArgumentError("segments must be at least 25 ms long")
    rng = np.random.default_rng(seed)
    seg_n = int(round(segment_len_ms * 1e-3 * sample_rate))
    classes = rng.integers(0, content_class_count, num_segments)
    parts, segments = [], []
    for i, c in enumerate(classes):
        parts.append(_segment_wave(rng, int(c), content_class_count, seg_n, sample_rate))
        segments.append((int(c), i * seg_n, (i + 1) * seg_n))
    x = np.concatenate(parts)
    x *= _SYNTH_PEAK / np.max(np.abs(x))
    return Utterance(x, sample_rate, segments, CLEAN)


# ---------------------------------------------------------------------- noise


def music_pitch_track(num_samples: int, seed: int,
                      sample_rate: int = DEFAULT_SAMPLE_RATE) -> np.ndarray:
    """Per-sample fundamental frequency of the synthetic music noise.

    Notes last ``MUSIC_NOTE_MS``; successive notes take a random-walk step of
    up to +/-4 semitones, reflected back into ``MUSIC_F0_RANGE``.
    """
    rng = np.random.default_rng([seed, 2])
    note_n = int(MUSIC_NOTE_MS * 1e-3 * sample_rate)
    n_notes = max(1, -(-num_samples // note_n))
    lo, hi = np.log2(MUSIC_F0_RANGE[0]), np.log2(MUSIC_F0_RANGE[1])
    pitch = rng.uniform(lo, hi)
    notes = np.empty(n_notes)
    for k in range(n_notes):
        notes[k] = pitch
        pitch += rng.integers(-4, 5) / 12.0
        if pitch > hi:
            pitch = 2 * hi - pitch
        if pitch < lo:
            pitch = 2 * lo - pitch
    return np.repeat(2.0 ** notes, note_n)[:num_samples]


def synth_noise(noise_type: str, num_samples: int, seed: int,
                sample_rate: int = DEFAULT_SAMPLE_RATE) -> np.ndarray:
    """Generate ``num_samples`` of white, street or music noise.

    White noise is raw standard normal; street and music are scaled to
    unit power.
    """
    if noise_type not in ADDITIVE_NOISE_TYPES:
        raise InvalidArgumentError(f"cannot synthesise noise of type {noise_type!r}")
    if num_samples < 0:
        raise InvalidArgumentError("num_samples must be non-negative")
    rng = np.random.default_rng([seed, 1])
    if noise_type == "white":
        return rng.standard_normal(num_samples)
    if noise_type == "street":
        b, a = sps.butter(STREET_ORDER, STREET_CUTOFF_HZ, fs=sample_rate)
        # burn-in so the filter state has settled before the returned span
        burn = int(0.05 * sample_rate)
        x = sps.lfilter(b, a, rng.standard_normal(num_samples + burn))[burn:]
    else:
        f0 = music_pitch_track(num_samples, seed, sample_rate)
        phase = 2 * np.pi * np.cumsum(f0) / sample_rate
        x = sum(np.sin(h * phase + rng.uniform(0, 2 * np.pi)) / h
                for h in range(1, MUSIC_HARMONICS + 1))
        x = x + 0.01 * rng.standard_normal(num_samples)
    if num_samples == 0:
        return x
    return x / np.sqrt(np.mean(x ** 2))


def signal_power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x))) if len(x) else 0.0


def snr_gain(clean_power: float, noise_power: float, snr_db: float) -> float:
    """Noise gain g giving 10*log10(clean_power / (g^2 * noise_power)) == snr_db."""
    return math.sqrt(clean_power / (noise_power * 10.0 ** (snr_db / 10.0)))


def mix_at_snr(clean: Utterance, noise: np.ndarray, snr_db: float, *,
               noise_type: str = "white") -> Utterance:
    """Add ``noise`` to ``clean`` scaled to the requested full-utterance SNR.

    The noise is truncated to the clean length. The output is not
    renormalised, so ``output - clean`` is exactly the scaled noise.
    """
    noise = np.asarray(noise, dtype=float)
    n = len(clean.samples)
    if len(noise) < n:
        raise InvalidArgumentError("noise is shorter than the clean signal")
    noise = noise[:n]
    p_clean, p_noise = signal_power(clean.samples), signal_power(noise)
    if p_clean <= 0.0 or p_noise <= 0.0:
        raise DegenerateInputError("clean and noise must both have nonzero power")
    g = snr_gain(p_clean, p_noise, snr_db)
    cond = NoiseCondition(noise_type, snr_db=float(snr_db))
    return replace(clean, samples=clean.samples + g * noise, noise=cond)


def measured_snr_db(clean: np.ndarray, mixed: np.ndarray) -> float:
    return 10.0 * math.log10(signal_power(clean) / signal_power(mixed - clean))


# ----------------------------------------------------------------- reverb


def make_rir(rt60_s: float, len_s: float, sample_rate: int = DEFAULT_SAMPLE_RATE,
             seed: int = 0) -> RoomImpulseResponse:
    """Exponentially decaying Gaussian tail with a unit direct path."""
    if rt60_s <= 0:
        raise InvalidArgumentError("rt60 must be positive")
    if len_s < rt60_s:
        raise InvalidArgumentError("impulse response must be at least rt60 long")
    n = np.arange(int(round(len_s * sample_rate)))
    rng = np.random.default_rng([seed, 3])
    taps = rng.standard_normal(len(n)) * np.exp(-DECAY_60DB * n / (rt60_s * sample_rate))
    taps[0] = 1.0
    return RoomImpulseResponse(taps, float(rt60_s), int(sample_rate))


def schroeder_decay_db(taps: np.ndarray) -> np.ndarray:
    """Backward-integrated energy decay curve in dB relative to its start."""
    edc = np.cumsum(np.square(taps)[::-1])[::-1]
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(edc / edc[0])


def apply_reverb(u: Utterance, rir: RoomImpulseResponse) -> Utterance:
    """Convolve with the RIR, keep the first ``len(u)`` samples and rescale
    so the output peak matches the input peak (hence stays <= 1)."""
    if u.sample_rate != rir.sample_rate:
        raise InvalidArgumentError("sample rate mismatch between utterance and RIR")
    if len(u.samples) == 0:
        return replace(u, noise=NoiseCondition("reverb", rt60_s=rir.rt60_s))
    y = sps.fftconvolve(u.samples, rir.taps)[: len(u.samples)]
    peak_in, peak_out = np.max(np.abs(u.samples)), np.max(np.abs(y))
    if peak_out > 0:
        y = y * (peak_in / peak_out)
    return replace(u, samples=y, noise=NoiseCondition("reverb", rt60_s=rir.rt60_s))


# ----------------------------------------------------------------- corpus

SPLITS = ("train", "dev", "test", "unseen")


@dataclass
class CorpusRecipe:
    """What to generate: conditions, counts and split ratios.

    In-domain ``conditions`` are split into train/dev/test by
    ``split_ratios``; ``unseen_conditions`` go wholly to the ``unseen``
    split and must use noise types absent from the in-domain set.
    """

    conditions: list[NoiseCondition]
    utterances_per_condition: int = 100
    split_ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)
    unseen_conditions: list[NoiseCondition] = field(default_factory=list)
    unseen_utterances_per_condition: int = 20
    content_classes: int = 12
    segments_per_utterance: int = 4
    segment_ms: float = 250.0
    sample_rate: int = DEFAULT_SAMPLE_RATE
    seed: int = 1234

    def __post_init__(self):
        self.conditions = [c if isinstance(c, NoiseCondition) else NoiseCondition.parse(c)
                           for c in self.conditions]
        self.unseen_conditions = [c if isinstance(c, NoiseCondition) else NoiseCondition.parse(c)
                                  for c in self.unseen_conditions]
        self.split_ratios = tuple(float(r) for r in self.split_ratios)
        self.validate()

    def validate(self):
        if not self.conditions:
            raise InvalidRecipeError("recipe lists no in-domain conditions")
        if len(set(self.conditions)) != len(self.conditions):
            raise InvalidRecipeError("duplicate in-domain condition")
        if len(self.split_ratios) != 3 or min(self.split_ratios) < 0 \
                or abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise InvalidRecipeError("split ratios must be three non-negative numbers summing to 1")
        if self.utterances_per_condition <= 0:
            raise InvalidRecipeError("utterances_per_condition must be positive")
        if self.unseen_conditions and self.unseen_utterances_per_condition <= 0:
            raise InvalidRecipeError("unseen_utterances_per_condition must be positive")
        seen = {c.noise_type for c in self.conditions}
        overlap = seen & {c.noise_type for c in self.unseen_conditions}
        if overlap:
            raise InvalidRecipeError(f"unseen noise types also in training: {sorted(overlap)}")
        if self.content_classes < 2:
            raise InvalidRecipeError("need at least two content classes")

    def split_counts(self) -> dict[str, int]:
        """Per-condition utterance counts for train/dev/test."""
        n = self.utterances_per_condition
        dev = int(math.floor(n * self.split_ratios[1] + 1e-9))
        test = int(math.floor(n * self.split_ratios[2] + 1e-9))
        return {"train": n - dev - test, "dev": dev, "test": test}

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusRecipe":
        d = dict(d)
        if "split_ratios" in d:
            d["split_ratios"] = tuple(d["split_ratios"])
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "conditions": [c.to_string() for c in self.conditions],
            "utterances_per_condition": self.utterances_per_condition,
            "split_ratios": list(self.split_ratios),
            "unseen_conditions": [c.to_string() for c in self.unseen_conditions],
            "unseen_utterances_per_condition": self.unseen_utterances_per_condition,
            "content_classes": self.content_classes,
            "segments_per_utterance": self.segments_per_utterance,
            "segment_ms": self.segment_ms,
            "sample_rate": self.sample_rate,
            "seed": self.seed,
        }


def derive_seed(*keys: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def render_condition(clean: Utterance, cond: NoiseCondition, seed: int) -> Utterance:
    """Apply one noise condition to a clean utterance."""
    if cond.noise_type == "clean":
        return replace(clean, noise=cond)
    if cond.noise_type == "reverb":
        rir = make_rir(cond.rt60_s, cond.rt60_s, clean.sample_rate, seed)
        return apply_reverb(clean, rir)
    noise = synth_noise(cond.noise_type, len(clean.samples), seed, clean.sample_rate)
    return mix_at_snr(clean, noise, cond.snr_db, noise_type=cond.noise_type)


def _make_utterance(job):
    recipe, cond, seed, utt_id = job
    clean = synth_clean_utterance(derive_seed(seed, 0), recipe.segments_per_utterance,
                                  recipe.segment_ms, recipe.content_classes,
                                  recipe.sample_rate)
    u = render_condition(clean, cond, derive_seed(seed, 1))
    peak = np.max(np.abs(u.samples))
    if peak > 0.99:
        u = replace(u, samples=u.samples * (0.99 / peak))
    u.utt_id = utt_id
    return u


def corpus_jobs(recipe: CorpusRecipe) -> list[tuple[str, tuple]]:
    jobs = []
    counts = recipe.split_counts()
    for ci, cond in enumerate(recipe.conditions):
        i = 0
        for split in ("train", "dev", "test"):
            for _ in range(counts[split]):
                seed = derive_seed(recipe.seed, 0, ci, i)
                uid = f"{split}_{cond.to_string().replace(':', '')}_{i:04d}"
                jobs.append((split, (recipe, cond, seed, uid)))
                i += 1
    for ci, cond in enumerate(recipe.unseen_conditions):
        for i in range(recipe.unseen_utterances_per_condition):
            seed = derive_seed(recipe.seed, 1, ci, i)
            uid = f"unseen_{cond.to_string().replace(':', '')}_{i:04d}"
            jobs.append(("unseen", (recipe, cond, seed, uid)))
    return jobs


def build_corpus(recipe: CorpusRecipe, jobs: int = 1) -> dict[str, list[Utterance]]:
    """Generate every split of the recipe; the result does not depend on ``jobs``."""
    recipe.validate()
    work = corpus_jobs(recipe)
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            utts = list(pool.map(_make_utterance, [w for _, w in work], chunksize=16))
    else:
        utts = [_make_utterance(w) for _, w in work]
    corpus: dict[str, list[Utterance]] = {s: [] for s in SPLITS}
    for (split, _), u in zip(work, utts):
        corpus[split].append(u)
    return corpus


def condition_counts(utts: Sequence[Utterance]) -> dict[NoiseCondition, int]:
    counts: dict[NoiseCondition, int] = {}
    for u in utts:
        counts[u.noise] = counts.get(u.noise, 0) + 1
    return counts
