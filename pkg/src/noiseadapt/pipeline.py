"""In-memory experiment pipeline shared by the CLI and the test-suite."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import evaluation
from .adaptation import AcousticSystem, SystemConfig, UttFeatures, train_system
from .features import (FeatureMatrix, LdaTransform, concat_features, lda_apply, lda_fit, mfcc,
                       splice)
from .signal_corpus import CorpusRecipe, Utterance, build_corpus

logger = logging.getLogger(__name__)


@dataclass
class FeatureParams:
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    n_mels: int = 23
    n_ceps: int = 13
    splice_left: int = 5
    splice_right: int = 5
    lda_dim: int = 40

    def to_dict(self) -> dict:
        return asdict(self)


def spliced_mfcc(u: Utterance, params: FeatureParams) -> FeatureMatrix:
    f = mfcc(u, params.frame_ms, params.hop_ms, params.n_mels, params.n_ceps)
    return splice(f, params.splice_left, params.splice_right)


def _spliced_job(job):
    return spliced_mfcc(*job)


def fit_feature_transform(train: list[FeatureMatrix], params: FeatureParams,
                          num_content: int) -> LdaTransform:
    """LDA on content classes; output width capped by the class count."""
    pooled = concat_features(train)
    out_dim = min(params.lda_dim, num_content - 1, pooled.dim)
    return lda_fit(pooled, out_dim)


def compute_features(corpus: dict[str, list[Utterance]], params: FeatureParams,
                     num_content: int, jobs: int = 1,
                     lda: LdaTransform | None = None):
    """Spliced MFCCs projected by an LDA fitted on the training split.

    Returns ``({split: [UttFeatures]}, lda)``.
    """
    order = [(s, u) for s, utts in corpus.items() for u in utts]
    work = [(u, params) for _, u in order]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            spliced = list(pool.map(_spliced_job, work, chunksize=16))
    else:
        spliced = [_spliced_job(w) for w in work]
    if lda is None:
        train = [f for (s, _), f in zip(order, spliced) if s == "train"]
        lda = fit_feature_transform(train, params, num_content)
    out: dict[str, list[UttFeatures]] = {s: [] for s in corpus}
    for (s, u), f in zip(order, spliced):
        out[s].append(UttFeatures(u.utt_id, u.noise, lda_apply(lda, f)))
    return out, lda


def pooled_final_features(system: AcousticSystem, utts: list[UttFeatures]):
    feats = [system.final_features(u.features) for u in utts]
    x = np.vstack([f.values for f in feats])
    types = np.concatenate([[u.noise.noise_type] * u.features.num_frames for u in utts])
    conds = np.concatenate([[u.noise.name] * u.features.num_frames for u in utts])
    return x, types, conds


def separation_scores(system: AcousticSystem, splits: dict[str, list[UttFeatures]]) -> dict:
    """Fisher separation of the system's final input features per split.

    The in-domain test split is labelled by noise type; the unseen split
    holds a single noise type, so it is labelled by full condition.
    """
    out = {}
    if splits.get("test"):
        x, types, _ = pooled_final_features(system, splits["test"])
        if len(set(types)) >= 2:
            out["test"] = evaluation.fisher_separation(x, types)
    if splits.get("unseen"):
        x, types, conds = pooled_final_features(system, splits["unseen"])
        labels = types if len(set(types)) >= 2 else conds
        if len(set(labels)) >= 2:
            out["unseen"] = evaluation.fisher_separation(x, labels)
    return out


@dataclass
class ExperimentResult:
    systems: dict[str, AcousticSystem] = field(default_factory=dict)
    reports: dict[str, evaluation.EvalReport] = field(default_factory=dict)


def run_experiment(recipe: CorpusRecipe, params: FeatureParams, config: SystemConfig,
                   methods=("baseline", "ndnn", "mtl"), jobs: int = 1) -> ExperimentResult:
    corpus = build_corpus(recipe, jobs)
    splits, lda = compute_features(corpus, params, recipe.content_classes, jobs)
    result = ExperimentResult()
    for m in methods:
        logger.info("training %s", m)
        sys_ = train_system(m, splits["train"], splits["dev"], config,
                            num_content=recipe.content_classes, lda=lda)
        rep = evaluation.score(sys_.predict, splits["test"], system=m)
        rep.fisher_separation = separation_scores(sys_, splits)
        result.systems[m] = sys_
        result.reports[m] = rep
    return result
