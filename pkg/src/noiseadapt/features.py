"""Frame features: MFCC, frame splicing and LDA projection, plus a small
binary archive format for feature matrices."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.fft
import scipy.linalg

from .errors import FormatError, InvalidArgumentError
from .signal_corpus import Utterance

LOG_FLOOR = 1e-10
PREEMPH = 0.97
LDA_EPS_SCALE = 1e-6

ARCHIVE_MAGIC = b"NAFM"
ARCHIVE_VERSION = 1
_HEADER = struct.Struct("<4sIIII")
_FLAG_LABELS = 1
_FLAG_SEGMENTS = 2


@dataclass
class FeatureMatrix:
    """A (frames x dims) matrix with optional per-frame labels.

    ``labels`` are content classes (or noise classes, depending on who
    built the matrix); ``segment_ids`` index the utterance segment that owns
    each frame and are used for segment-level majority voting.
    """

    values: np.ndarray
    labels: np.ndarray | None = None
    segment_ids: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if len(self.labels) != len(self.values):
                raise InvalidArgumentError("label count does not match frame count")
        if self.segment_ids is not None:
            self.segment_ids = np.asarray(self.segment_ids, dtype=np.int64)
            if len(self.segment_ids) != len(self.values):
                raise InvalidArgumentError("segment id count does not match frame count")

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def with_values(self, values: np.ndarray) -> "FeatureMatrix":
        return replace(self, values=values)

    def rows(self, idx) -> "FeatureMatrix":
        return FeatureMatrix(
            self.values[idx],
            None if self.labels is None else self.labels[idx],
            None if self.segment_ids is None else self.segment_ids[idx],
        )


def concat_features(mats) -> FeatureMatrix:
    mats = list(mats)
    if not mats:
        raise InvalidArgumentError("nothing to concatenate")
    labels = None
    if all(m.labels is not None for m in mats):
        labels = np.concatenate([m.labels for m in mats])
    segments = None
    if all(m.segment_ids is not None for m in mats):
        segments = np.concatenate([m.segment_ids for m in mats])
    return FeatureMatrix(np.vstack([m.values for m in mats]), labels, segments)


# ------------------------------------------------------------------- MFCC


def hz_to_mel(f):
    """HTK mel scale."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular filters on the HTK mel scale, shape (n_mels, n_fft // 2 + 1)."""
    fmax = sample_rate / 2.0 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    bins = np.fft.rfftfreq(n_fft, 1.0 / sample_rate)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (bins - lo) / (mid - lo)
    down = (hi - bins) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down))


def num_frames(num_samples: int, frame_len: int, hop: int) -> int:
    if num_samples < frame_len:
        return 0
    return (num_samples - frame_len) // hop + 1


def frame_signal(x: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    n = num_frames(len(x), frame_len, hop)
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n)[:, None]
    return x[idx]


def frame_segments(u: Utterance, n: int, frame_len: int, hop: int):
    """Content label and segment index of the segment owning each frame centre."""
    if not u.segments:
        return None, None
    centres = hop * np.arange(n) + frame_len // 2
    ends = np.array([end for _, _, end in u.segments])
    seg = np.minimum(np.searchsorted(ends, centres, side="right"), len(ends) - 1)
    classes = np.array([c for c, _, _ in u.segments])
    return classes[seg], seg


def mfcc(u: Utterance, frame_ms: float = 25.0, hop_ms: float = 10.0,
         n_mels: int = 23, n_ceps: int = 13) -> FeatureMatrix:
    """MFCCs with pre-emphasis, Hamming window, HTK mel filters and an
    orthonormal DCT-II. Frames carry the content label of their centre."""
    fs = u.sample_rate
    frame_len = int(round(frame_ms * 1e-3 * fs))
    hop = int(round(hop_ms * 1e-3 * fs))
    n = num_frames(len(u.samples), frame_len, hop)
    if n == 0:
        raise InvalidArgumentError("utterance is shorter than one frame")
    frames = frame_signal(np.asarray(u.samples, dtype=float), frame_len, hop)
    emph = np.empty_like(frames)
    emph[:, 1:] = frames[:, 1:] - PREEMPH * frames[:, :-1]
    emph[:, 0] = frames[:, 0] * (1.0 - PREEMPH)
    n_fft = 1 << (frame_len - 1).bit_length()
    spec = np.abs(np.fft.rfft(emph * np.hamming(frame_len), n_fft)) ** 2
    mel = spec @ mel_filterbank(n_mels, n_fft, fs).T
    logmel = np.log(np.maximum(mel, LOG_FLOOR))
    ceps = scipy.fft.dct(logmel, type=2, norm="ortho", axis=1)[:, :n_ceps]
    labels, segs = frame_segments(u, n, frame_len, hop)
    return FeatureMatrix(ceps, labels, segs)


def splice(f: FeatureMatrix, left: int = 5, right: int = 5) -> FeatureMatrix:
    """Stack each frame with its neighbours, repeating the edge frames."""
    if f.num_frames < 1:
        raise InvalidArgumentError("cannot splice an empty matrix")
    if left < 0 or right < 0:
        raise InvalidArgumentError("context widths must be non-negative")
    t = f.num_frames
    padded = np.pad(f.values, ((left, right), (0, 0)), mode="edge")
    out = np.hstack([padded[k:k + t] for k in range(left + right + 1)])
    return f.with_values(out)


# -------------------------------------------------------------------- LDA


def scatter_matrices(x: np.ndarray, labels: np.ndarray):
    """Within- and between-class scatter, both divided by the frame count."""
    x = np.asarray(x, dtype=float)
    classes, inv = np.unique(labels, return_inverse=True)
    n, d = x.shape
    counts = np.bincount(inv, minlength=len(classes)).astype(float)
    means = np.zeros((len(classes), d))
    np.add.at(means, inv, x)
    means /= counts[:, None]
    centred = x - means[inv]
    sw = centred.T @ centred / n
    dm = means - x.mean(axis=0)
    sb = (dm * counts[:, None]).T @ dm / n
    return sw, sb, classes


def regularisation(sw: np.ndarray) -> float:
    eps = LDA_EPS_SCALE * np.trace(sw) / sw.shape[0]
    return eps if eps > 0 else 1e-12


@dataclass(frozen=True)
class LdaTransform:
    """``y = (x - mean) @ projection``; projection is (D_in, D_out)."""

    projection: np.ndarray
    mean: np.ndarray
    eigenvalues: np.ndarray | None = None
    class_count: int = 0

    @property
    def in_dim(self) -> int:
        return self.projection.shape[0]

    @property
    def out_dim(self) -> int:
        return self.projection.shape[1]

    @classmethod
    def identity(cls, dim: int) -> "LdaTransform":
        return cls(np.eye(dim), np.zeros(dim))

    def to_dict(self) -> dict:
        return {
            "projection": self.projection.tolist(),
            "mean": self.mean.tolist(),
            "eigenvalues": None if self.eigenvalues is None else self.eigenvalues.tolist(),
            "class_count": self.class_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LdaTransform":
        ev = d.get("eigenvalues")
        return cls(np.array(d["projection"], dtype=float), np.array(d["mean"], dtype=float),
                   None if ev is None else np.array(ev, dtype=float), int(d.get("class_count", 0)))


def lda_fit(f: FeatureMatrix, out_dim: int, labels=None) -> LdaTransform:
    """Fit an LDA projection from labelled frames.

    Columns are the leading generalised eigenvectors of
    ``(S_b, S_w + eps*I)`` scaled to unit within-class variance, with the
    sign fixed so each column's largest-magnitude entry is positive.
    """
    labels = f.labels if labels is None else np.asarray(labels)
    if labels is None:
        raise InvalidArgumentError("LDA needs frame labels")
    classes = np.unique(labels)
    if len(classes) < 2:
        raise InvalidArgumentError("LDA needs at least two classes")
    if not 1 <= out_dim <= min(len(classes) - 1, f.dim):
        raise InvalidArgumentError(
            f"out_dim must be in [1, {min(len(classes) - 1, f.dim)}], got {out_dim}")
    sw, sb, _ = scatter_matrices(f.values, labels)
    reg = sw + regularisation(sw) * np.eye(f.dim)
    evals, evecs = scipy.linalg.eigh(sb, reg)
    order = np.argsort(evals)[::-1][:out_dim]
    w = evecs[:, order]
    pivot = np.argmax(np.abs(w), axis=0)
    w = w * np.sign(w[pivot, np.arange(out_dim)])
    return LdaTransform(w, f.values.mean(axis=0), evals[order], len(classes))


def lda_apply(t: LdaTransform, f: FeatureMatrix) -> FeatureMatrix:
    if f.dim != t.in_dim:
        raise InvalidArgumentError(f"LDA expects {t.in_dim} dims, got {f.dim}")
    return f.with_values((f.values - t.mean) @ t.projection)


def lda_objective(t: LdaTransform, f: FeatureMatrix, labels=None) -> float:
    """trace((W' S_w' W)^-1 W' S_b W) with the regularised S_w."""
    labels = f.labels if labels is None else labels
    sw, sb, _ = scatter_matrices(f.values, labels)
    reg = sw + regularisation(sw) * np.eye(f.dim)
    w = t.projection
    return float(np.trace(np.linalg.solve(w.T @ reg @ w, w.T @ sb @ w)))


# --------------------------------------------------------------- archives


def write_archive(f: FeatureMatrix, path) -> None:
    """Little-endian archive: header, float32 rows, optional int32 blocks.

    Header is ``magic(4s) version(u32) T(u32) D(u32) flags(u32)``; flag bit 0
    marks a label block, bit 1 a segment-id block, each T int32 values.
    """
    flags = (_FLAG_LABELS if f.labels is not None else 0) | \
            (_FLAG_SEGMENTS if f.segment_ids is not None else 0)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(ARCHIVE_MAGIC, ARCHIVE_VERSION, f.num_frames, f.dim, flags))
        fh.write(np.ascontiguousarray(f.values, dtype="<f4").tobytes())
        if f.labels is not None:
            fh.write(f.labels.astype("<i4").tobytes())
        if f.segment_ids is not None:
            fh.write(f.segment_ids.astype("<i4").tobytes())


def read_archive(path) -> FeatureMatrix:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, t, d, flags = _HEADER.unpack_from(data)
    if magic != ARCHIVE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != ARCHIVE_VERSION:
        raise FormatError(f"{path}: unsupported archive version {version}")
    expected = _HEADER.size + 4 * t * d + 4 * t * (bool(flags & 1) + bool(flags & 2))
    if len(data) != expected:
        raise FormatError(f"{path}: size {len(data)} does not match header ({expected})")
    pos = _HEADER.size
    values = np.frombuffer(data, "<f4", t * d, pos).reshape(t, d).astype(float)
    pos += 4 * t * d
    labels = segs = None
    if flags & _FLAG_LABELS:
        labels = np.frombuffer(data, "<i4", t, pos).astype(np.int64)
        pos += 4 * t
    if flags & _FLAG_SEGMENTS:
        segs = np.frombuffer(data, "<i4", t, pos).astype(np.int64)
    return FeatureMatrix(values.reshape(t, d), labels, segs)


def write_csv(f: FeatureMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{i}" for i in range(f.dim)] + (["label"] if f.labels is not None else []))
        for i, row in enumerate(f.values):
            extra = [int(f.labels[i])] if f.labels is not None else []
            w.writerow([repr(float(v)) for v in row] + extra)
