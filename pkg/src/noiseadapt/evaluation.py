"""Scoring, significance testing and feature-space separability."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .errors import InvalidArgumentError
from .features import FeatureMatrix, lda_apply, lda_fit, regularisation, scatter_matrices

SIGNIFICANCE_ALPHA = 0.05
SCATTER_POINTS = 700


@dataclass
class ScoredUtterance:
    utt_id: str
    condition: str
    frames: int
    frame_errors: int
    correct: bool


@dataclass
class ConditionScore:
    frames: int = 0
    frame_errors: int = 0
    utterances: int = 0
    utterance_errors: int = 0

    @property
    def frame_error(self) -> float:
        return 100.0 * self.frame_errors / self.frames if self.frames else 0.0

    @property
    def utterance_error(self) -> float:
        return 100.0 * self.utterance_errors / self.utterances if self.utterances else 0.0


@dataclass
class EvalReport:
    """Error rates (percent) per noise condition, pooled and macro-averaged."""

    system: str
    utterances: list[ScoredUtterance] = field(default_factory=list)
    fisher_separation: dict[str, float] = field(default_factory=dict)

    @property
    def conditions(self) -> dict[str, ConditionScore]:
        out: dict[str, ConditionScore] = {}
        for u in self.utterances:
            c = out.setdefault(u.condition, ConditionScore())
            c.frames += u.frames
            c.frame_errors += u.frame_errors
            c.utterances += 1
            c.utterance_errors += int(not u.correct)
        return dict(sorted(out.items()))

    @property
    def frame_error(self) -> float:
        n = sum(u.frames for u in self.utterances)
        return 100.0 * sum(u.frame_errors for u in self.utterances) / n if n else 0.0

    @property
    def utterance_error(self) -> float:
        n = len(self.utterances)
        return 100.0 * sum(not u.correct for u in self.utterances) / n if n else 0.0

    @property
    def macro_frame_error(self) -> float:
        c = self.conditions
        return float(np.mean([s.frame_error for s in c.values()])) if c else 0.0

    @property
    def macro_utterance_error(self) -> float:
        c = self.conditions
        return float(np.mean([s.utterance_error for s in c.values()])) if c else 0.0

    def correctness(self) -> dict[str, bool]:
        return {u.utt_id: u.correct for u in self.utterances}

    def to_dict(self) -> dict:
        return {
            "system": self.system,
            "conditions": {
                name: {"frames": s.frames, "frame_errors": s.frame_errors,
                       "frame_error_pct": s.frame_error, "utterances": s.utterances,
                       "utterance_errors": s.utterance_errors,
                       "utterance_error_pct": s.utterance_error}
                for name, s in self.conditions.items()},
            "pooled": {"frame_error_pct": self.frame_error,
                       "utterance_error_pct": self.utterance_error},
            "macro_average": {"frame_error_pct": self.macro_frame_error,
                              "utterance_error_pct": self.macro_utterance_error},
            "fisher_separation": dict(sorted(self.fisher_separation.items())),
            "utterances": [{"utt_id": u.utt_id, "condition": u.condition, "frames": u.frames,
                            "frame_errors": u.frame_errors, "correct": u.correct}
                           for u in self.utterances],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        utts = [ScoredUtterance(u["utt_id"], u["condition"], u["frames"],
                                u["frame_errors"], u["correct"]) for u in d["utterances"]]
        return cls(d["system"], utts, dict(d.get("fisher_separation", {})))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def to_table(self) -> str:
        rows = [(name, f"{s.frame_error:.1f}", f"{s.utterance_error:.1f}")
                for name, s in self.conditions.items()]
        rows.append(("Average", f"{self.macro_frame_error:.1f}", f"{self.macro_utterance_error:.1f}"))
        header = ("Testset", "FrameErr(%)", "UttErr(%)")
        return f"system: {self.system}\n" + format_table(header, rows)


def format_table(header, rows) -> str:
    widths = [max(len(str(r[i])) for r in [header] + list(rows)) for i in range(len(header))]
    line = "-+-".join("-" * w for w in widths)
    fmt = lambda r: " | ".join(str(v).rjust(w) if i else str(v).ljust(w)
                               for i, (v, w) in enumerate(zip(r, widths)))
    return "\n".join([fmt(header), line] + [fmt(r) for r in rows]) + "\n"


def segment_votes(pred: np.ndarray, segment_ids: np.ndarray) -> dict[int, int]:
    """Majority class per segment; ties go to the smallest class id."""
    out = {}
    for s in np.unique(segment_ids):
        out[int(s)] = int(np.argmax(np.bincount(pred[segment_ids == s])))
    return out


def score_utterance(utt_id: str, condition: str, f: FeatureMatrix,
                    pred: np.ndarray) -> ScoredUtterance:
    if f.labels is None or f.segment_ids is None:
        raise InvalidArgumentError(f"{utt_id}: scoring needs frame labels and segment ids")
    pred = np.asarray(pred)
    errors = int(np.sum(pred != f.labels))
    votes = segment_votes(pred, f.segment_ids)
    truth = segment_votes(f.labels, f.segment_ids)
    return ScoredUtterance(utt_id, condition, f.num_frames, errors, votes == truth)


def score(predict: Callable[[FeatureMatrix], np.ndarray], test_set: Sequence,
          system: str = "system") -> EvalReport:
    """Score a per-utterance predictor on a labelled test set.

    ``test_set`` items need ``utt_id``, ``noise`` (a NoiseCondition) and
    ``features``. An utterance counts as wrong when the majority vote of any
    of its segments disagrees with that segment's label.
    """
    report = EvalReport(system)
    for item in test_set:
        report.utterances.append(
            score_utterance(item.utt_id, item.noise.name, item.features, predict(item.features)))
    return report


def mcnemar_exact(b: int, c: int) -> float:
    """Two-sided exact McNemar p-value from the discordant counts."""
    n = b + c
    if n == 0:
        return 1.0
    return float(min(1.0, 2.0 * stats.binom.cdf(min(b, c), n, 0.5)))


def matched_pairs_test(correct_a: dict[str, bool], correct_b: dict[str, bool]) -> float:
    """Exact McNemar test on per-utterance correctness of two systems."""
    if set(correct_a) != set(correct_b):
        raise InvalidArgumentError("systems were scored on different utterances")
    b = sum(1 for k in correct_a if not correct_a[k] and correct_b[k])
    c = sum(1 for k in correct_a if correct_a[k] and not correct_b[k])
    return mcnemar_exact(b, c)


def fisher_separation(f: FeatureMatrix | np.ndarray, labels) -> float:
    """trace((S_w + eps*I)^-1 S_b); larger means better separated classes."""
    x = f.values if isinstance(f, FeatureMatrix) else np.asarray(f, dtype=float)
    labels = np.asarray(labels)
    if len(np.unique(labels)) < 2:
        raise InvalidArgumentError("separation needs at least two classes")
    sw, sb, _ = scatter_matrices(x, labels)
    reg = sw + regularisation(sw) * np.eye(x.shape[1])
    return float(np.trace(np.linalg.solve(reg, sb)))


@dataclass
class ScatterTable:
    x: np.ndarray
    y: np.ndarray
    labels: list[str]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "y", "label"])
        for a, b, lab in zip(self.x, self.y, self.labels):
            w.writerow([repr(float(a)), repr(float(b)), lab])
        return buf.getvalue()


def export_scatter(f: FeatureMatrix | np.ndarray, labels, n_points: int = SCATTER_POINTS,
                   seed: int = 0) -> ScatterTable:
    """Fit a 2-D LDA on the noise labels and sample ``n_points`` projected rows."""
    x = f.values if isinstance(f, FeatureMatrix) else np.asarray(f, dtype=float)
    labels = np.asarray(labels)
    if len(np.unique(labels)) < 3:
        raise InvalidArgumentError("a 2-D LDA needs at least three classes")
    names, codes = np.unique(labels, return_inverse=True)
    fm = FeatureMatrix(x, codes)
    t = lda_fit(fm, 2)
    rng = np.random.default_rng(seed)
    n = min(n_points, len(x))
    idx = np.sort(rng.choice(len(x), n, replace=False))
    proj = lda_apply(t, fm.rows(idx)).values
    return ScatterTable(proj[:, 0], proj[:, 1], [str(v) for v in names[codes[idx]]])


def significance_star(p: float) -> str:
    return "*" if p < SIGNIFICANCE_ALPHA else ""


def comparison_table(reports: Sequence[EvalReport], reference: int = 0) -> tuple[str, dict]:
    """Cross-system table (macro utterance error per condition) with
    matched-pairs p-values against the reference system."""
    ref = reports[reference]
    conds = sorted({c for r in reports for c in r.conditions})
    pvals = {}
    for r in reports:
        if r is not ref:
            pvals[r.system] = matched_pairs_test(ref.correctness(), r.correctness())
    header = ("Testset",) + tuple(r.system for r in reports)
    rows = []
    for c in conds:
        rows.append((c,) + tuple(f"{r.conditions[c].utterance_error:.1f}" if c in r.conditions
                                 else "-" for r in reports))
    rows.append(("Average",) + tuple(
        f"{r.macro_utterance_error:.1f}" + ("" if r is ref else significance_star(pvals[r.system]))
        for r in reports))
    rows.append(("FrameErr",) + tuple(f"{r.macro_frame_error:.1f}" for r in reports))
    text = format_table(header, rows)
    text += f"(*) matched-pairs p < {SIGNIFICANCE_ALPHA} against {ref.system}\n"
    data = {"reference": ref.system,
            "systems": [r.system for r in reports],
            "macro_utterance_error": {r.system: r.macro_utterance_error for r in reports},
            "macro_frame_error": {r.system: r.macro_frame_error for r in reports},
            "p_values": pvals,
            "significant": {k: p < SIGNIFICANCE_ALPHA for k, p in pvals.items()}}
    return text, data

