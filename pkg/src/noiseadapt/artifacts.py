"""On-disk pipeline stages behind the command-line verbs.

Layout of a run directory::

    run.json                      resolved config and run id
    corpus/manifest.csv           one row per utterance (split, condition, segments)
    corpus/wav/<split>/<id>.wav   mono PCM16 audio
    features/<split>.fea          spliced+LDA features of every utterance in a split
    features/index.json           per-utterance row ranges and conditions
    features/lda.json             the feature transform
    systems/<method>/             trained system bundle (manifest.json, models, reports)
    reports/<split>/<method>.json per-system EvalReport (+ .txt table)
    reports/<split>/comparison.*  cross-system table with significance marks (+ .png)
    scatter/<method>_<split>.csv  2-D projection of final input features (+ .png)
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import shutil
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import evaluation, plotting
from .adaptation import METHODS, AcousticSystem, UttFeatures, train_system
from .config import ExperimentConfig
from .errors import InvalidArgumentError, InvalidStateError
from .features import (LdaTransform, concat_features, lda_apply, read_archive,
                       write_archive)
from .pipeline import fit_feature_transform, pooled_final_features, separation_scores, spliced_mfcc
from .signal_corpus import SPLITS, NoiseCondition, build_corpus
from .wavio import wav_read, wav_write

logger = logging.getLogger(__name__)

MANIFEST_FIELDS = ["utt_id", "split", "condition", "noise_type", "snr_db", "rt60_s", "path",
                   "num_samples", "segments"]


class OutputExistsError(InvalidStateError):
    """Raised when a stage would overwrite earlier output without ``force``."""


def _prepare(directory: Path, force: bool) -> None:
    if directory.exists() and any(directory.iterdir()):
        if not force:
            raise OutputExistsError(f"{directory} already exists (use --force to overwrite)")
        shutil.rmtree(directory)
    directory.mkdir(parents=True, exist_ok=True)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _check_run(cfg: ExperimentConfig, stage_dir: Path, stage: str, hint: str) -> None:
    marker = stage_dir / "run_id"
    if not marker.exists():
        raise InvalidStateError(f"missing {stage} output in {stage_dir} (run `noiseadapt {hint}` first)")
    found = marker.read_text().strip()
    if found != cfg.run_id:
        raise InvalidStateError(f"{stage} output in {stage_dir} belongs to run {found}, "
                                f"current config is run {cfg.run_id} (rerun `noiseadapt {hint}`)")


def _mark(cfg: ExperimentConfig, stage_dir: Path) -> None:
    (stage_dir / "run_id").write_text(cfg.run_id + "\n")


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --------------------------------------------------------------- generate


def generate(cfg: ExperimentConfig, jobs: int = 1, force: bool = False) -> Path:
    out = cfg.output / "corpus"
    _prepare(out, force)
    cfg.output.mkdir(parents=True, exist_ok=True)
    _write_json(cfg.output / "run.json", {"run_id": cfg.run_id, "config": cfg.to_dict()})
    corpus = build_corpus(cfg.corpus, jobs)
    rows = []
    for split in SPLITS:
        (out / "wav" / split).mkdir(parents=True, exist_ok=True)
        for u in corpus.get(split, []):
            rel = Path("wav") / split / f"{u.utt_id}.wav"
            wav_write(u, out / rel)
            segs = ";".join(f"{c}:{s}:{e}" for c, s, e in u.segments)
            n = u.noise
            rows.append({"utt_id": u.utt_id, "split": split, "condition": n.to_string(),
                         "noise_type": n.noise_type,
                         "snr_db": "" if n.snr_db is None else f"{n.snr_db:g}",
                         "rt60_s": "" if n.rt60_s is None else f"{n.rt60_s:g}",
                         "path": rel.as_posix(), "num_samples": len(u.samples), "segments": segs})
    with open(out / "manifest.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, MANIFEST_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    _write_json(out / "recipe.json", cfg.corpus.to_dict())
    _mark(cfg, out)
    logger.info("wrote %d utterances to %s", len(rows), out)
    return out


def read_manifest(corpus_dir: Path) -> list[dict]:
    with open(corpus_dir / "manifest.csv", newline="") as fh:
        return list(csv.DictReader(fh))


def _load_utterance(job):
    corpus_dir, row = job
    u = wav_read(corpus_dir / row["path"])
    u.utt_id = row["utt_id"]
    u.noise = NoiseCondition.parse(row["condition"])
    u.segments = [tuple(int(v) for v in s.split(":")) for s in row["segments"].split(";") if s]
    u.check()
    return u


def _features_job(job):
    u = _load_utterance(job[:2])
    return spliced_mfcc(u, job[2])


# --------------------------------------------------------------- features


def features(cfg: ExperimentConfig, jobs: int = 1, force: bool = False) -> Path:
    corpus_dir = cfg.output / "corpus"
    _check_run(cfg, corpus_dir, "corpus", "generate")
    out = cfg.output / "features"
    _prepare(out, force)
    rows = read_manifest(corpus_dir)
    work = [(corpus_dir, r, cfg.features) for r in rows]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            spliced = list(pool.map(_features_job, work, chunksize=16))
    else:
        spliced = [_features_job(w) for w in work]
    train = [f for r, f in zip(rows, spliced) if r["split"] == "train"]
    lda = fit_feature_transform(train, cfg.features, cfg.corpus.content_classes)
    index = {}
    for split in SPLITS:
        members = [(r, f) for r, f in zip(rows, spliced) if r["split"] == split]
        if not members:
            continue
        projected = [lda_apply(lda, f) for _, f in members]
        write_archive(concat_features(projected), out / f"{split}.fea")
        entries, start = [], 0
        for (r, _), f in zip(members, projected):
            entries.append({"utt_id": r["utt_id"], "condition": r["condition"],
                            "start": start, "end": start + f.num_frames})
            start += f.num_frames
        index[split] = entries
    _write_json(out / "index.json", index)
    _write_json(out / "lda.json", lda.to_dict())
    _mark(cfg, out)
    logger.info("features for %d utterances, dim %d", len(rows), lda.projection.shape[1])
    return out


def load_split(cfg: ExperimentConfig, split: str) -> list[UttFeatures]:
    feat_dir = cfg.output / "features"
    _check_run(cfg, feat_dir, "features", "features")
    index = json.loads((feat_dir / "index.json").read_text())
    if split not in index:
        return []
    pooled = read_archive(feat_dir / f"{split}.fea")
    return [UttFeatures(e["utt_id"], NoiseCondition.parse(e["condition"]),
                        pooled.rows(slice(e["start"], e["end"]))) for e in index[split]]


def load_lda(cfg: ExperimentConfig) -> LdaTransform:
    return LdaTransform.from_dict(json.loads((cfg.output / "features" / "lda.json").read_text()))


# ------------------------------------------------------------------ train


def _methods(cfg: ExperimentConfig, method: str | None) -> list[str]:
    if method in (None, "all"):
        return list(cfg.methods)
    if method not in METHODS:
        raise InvalidArgumentError(f"unknown method {method!r} (choose from {', '.join(METHODS)})")
    return [method]


def train(cfg: ExperimentConfig, method: str | None = None, force: bool = False) -> list[Path]:
    tr, dv = load_split(cfg, "train"), load_split(cfg, "dev")
    if not tr or not dv:
        raise InvalidStateError("training needs non-empty train and dev splits")
    lda = load_lda(cfg)
    written = []
    for m in _methods(cfg, method):
        out = cfg.output / "systems" / m
        _prepare(out, force)
        logger.info("training %s", m)
        system = train_system(m, tr, dv, cfg.system, cfg.corpus.content_classes, lda)
        system.save(out)
        _mark(cfg, out)
        written.append(out)
    return written


def load_system(cfg: ExperimentConfig, method: str) -> AcousticSystem:
    d = cfg.output / "systems" / method
    _check_run(cfg, d, f"{method} system", f"train --method {method}")
    return AcousticSystem.load(d)


def trained_methods(cfg: ExperimentConfig) -> list[str]:
    root = cfg.output / "systems"
    return [m for m in METHODS if (root / m / "manifest.json").exists()]


# --------------------------------------------------------------- evaluate


def evaluate(cfg: ExperimentConfig, method: str | None = None) -> dict[str, dict]:
    """Score every requested bundle on the test and unseen splits.

    Returns ``{split: {"reports": {method: EvalReport}, "comparison": text}}``;
    the comparison is None for a single bundle.
    """
    methods = trained_methods(cfg) if method in (None, "all") else _methods(cfg, method)
    if not methods:
        raise InvalidStateError("no trained systems found (run `noiseadapt train` first)")
    systems = {m: load_system(cfg, m) for m in methods}
    splits = {s: load_split(cfg, s) for s in ("test", "unseen")}
    out: dict[str, dict] = {}
    for split, items in splits.items():
        if not items:
            continue
        rep_dir = cfg.output / "reports" / split
        rep_dir.mkdir(parents=True, exist_ok=True)
        reports = []
        for m, system in systems.items():
            rep = evaluation.score(system.predict, items, system=m)
            rep.fisher_separation = separation_scores(system, {split: items})
            (rep_dir / f"{m}.json").write_text(rep.to_json() + "\n")
            (rep_dir / f"{m}.txt").write_text(rep.to_table())
            reports.append(rep)
        text = None
        if len(reports) >= 2:
            ref = methods.index("baseline") if "baseline" in methods else 0
            text, data = evaluation.comparison_table(reports, reference=ref)
            (rep_dir / "comparison.txt").write_text(text)
            _write_json(rep_dir / "comparison.json", data)
        out[split] = {"reports": {r.system: r for r in reports}, "comparison": text}
        plotting.error_bars(reports, rep_dir / "error_rates.png")
    return out


# ---------------------------------------------------------------- scatter


def scatter(cfg: ExperimentConfig, method: str | None = None, split: str | None = None,
            n_points: int | None = None) -> list[Path]:
    split = split or cfg.scatter_split
    n_points = cfg.scatter_points if n_points is None else n_points
    methods = trained_methods(cfg) if method in (None, "all") else _methods(cfg, method)
    if not methods:
        raise InvalidStateError("no trained systems found (run `noiseadapt train` first)")
    items = load_split(cfg, split)
    if not items:
        raise InvalidStateError(f"split {split!r} is empty")
    out_dir = cfg.output / "scatter"
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for m in methods:
        x, types, conds = pooled_final_features(load_system(cfg, m), items)
        labels = types if len(set(types)) >= 3 else conds
        table = evaluation.export_scatter(x, labels, n_points, seed=cfg.seed)
        path = out_dir / f"{m}_{split}.csv"
        path.write_text(table.to_csv())
        plotting.scatter(table, out_dir / f"{m}_{split}.png", title=f"{m} ({split})")
        written.append(path)
    return written


def report_digests(cfg: ExperimentConfig) -> dict[str, str]:
    """sha256 of every JSON report and scatter CSV, keyed by relative path."""
    files = sorted(list((cfg.output / "reports").rglob("*.json"))
                   + list((cfg.output / "scatter").glob("*.csv")))
    return {p.relative_to(cfg.output).as_posix(): file_digest(p) for p in files}
