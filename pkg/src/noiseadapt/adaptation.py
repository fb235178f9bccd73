"""Noise-adaptation strategies as producers of auxiliary input features.

Every method maps an utterance's feature matrix X to an optional noise
feature block X^e which is appended to each frame before the acoustic
model sees it:

* ``baseline``        no auxiliary block
* ``nat``             mean of the first and last ten frames, repeated
* ``ivector_offline`` one i-vector per noise type for training, per
                      utterance at test time
* ``ivector_online``  i-vector of a trailing 10-frame window, per frame
* ``ndnn``            bottleneck activations of a noise classifier, per frame
* ``mtl``             no block; one network jointly predicts content and noise
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import ivector as iv
from .errors import InvalidArgumentError, InvalidStateError
from .features import FeatureMatrix, LdaTransform, concat_features
from .neural_net import Network, NetworkConfig, TrainReport, count_parameters, train
from .signal_corpus import NOISE_TYPES, NoiseCondition

logger = logging.getLogger(__name__)

METHODS = ("baseline", "nat", "ivector_offline", "ivector_online", "ndnn", "mtl")
NAT_EDGE_FRAMES = 10


@dataclass
class UttFeatures:
    utt_id: str
    noise: NoiseCondition
    features: FeatureMatrix


@dataclass
class NoiseEmbedding:
    """Per-frame (T, E) rows, or a single (1, E) row broadcast to every frame."""

    values: np.ndarray
    per_frame: bool = True

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass
class SystemConfig:
    """Shapes and hyper-parameters for all six systems.

    ``dnoise_hidden[bottleneck_index]`` is the embedding width E.
    """

    dnoise_hidden: list[int] = field(default_factory=lambda: [256, 256, 256, 40, 256])
    bottleneck_index: int = 3
    dphoneme_hidden: list[int] = field(default_factory=lambda: [256, 256, 256])
    mtl_shared_layers: int = 2
    head2_weight: float = 0.3
    activation: str = "relu"
    learning_rate: float | None = 0.05
    batch_size: int = 128
    epochs: int = 12
    dtype: str = "float32"
    ubm_components: int = 64
    ivector_dim: int = 40
    ubm_iters: int = 10
    tv_iters: int = 10
    online_window: int = 10
    seed: int = 0

    @property
    def embedding_dim(self) -> int:
        return self.dnoise_hidden[self.bottleneck_index]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SystemConfig":
        return cls(**d)

    def network(self, sizes, seed_offset: int, **kw) -> NetworkConfig:
        return NetworkConfig(list(sizes), activation=self.activation,
                             learning_rate=self.learning_rate, batch_size=self.batch_size,
                             epochs=self.epochs, dtype=self.dtype,
                             seed=self.seed * 1000 + seed_offset, **kw)


# ----------------------------------------------------------- embeddings


def nat_estimate(f: FeatureMatrix) -> NoiseEmbedding:
    """Mean of the first and last ten frames (each frame counted once)."""
    t = f.num_frames
    if t < 1:
        raise InvalidArgumentError("empty feature matrix")
    idx = np.union1d(np.arange(min(NAT_EDGE_FRAMES, t)), np.arange(max(0, t - NAT_EDGE_FRAMES), t))
    return NoiseEmbedding(f.values[idx].mean(axis=0, keepdims=True), per_frame=False)


def extract_embeddings(dnoise: Network, f: FeatureMatrix) -> NoiseEmbedding:
    """Bottleneck activations of the noise network; needs no noise label."""
    if f.dim != dnoise.input_dim:
        raise InvalidArgumentError(f"noise network expects {dnoise.input_dim} dims, got {f.dim}")
    return NoiseEmbedding(dnoise.tap_bottleneck(f.values).values, per_frame=True)


def augment(f: FeatureMatrix, e: NoiseEmbedding | None) -> FeatureMatrix:
    if e is None or e.dim == 0:
        return f
    if e.per_frame and e.values.shape[0] != f.num_frames:
        raise InvalidArgumentError(
            f"embedding has {e.values.shape[0]} rows for {f.num_frames} frames")
    if not e.per_frame and e.values.shape[0] != 1:
        raise InvalidArgumentError("broadcast embedding must have exactly one row")
    block = e.values if e.per_frame else np.repeat(e.values, f.num_frames, axis=0)
    return f.with_values(np.hstack([f.values, block]))


# ------------------------------------------------------------ datasets


def noise_classes(utts: Sequence[UttFeatures]) -> list[str]:
    present = {u.noise.noise_type for u in utts}
    return [t for t in NOISE_TYPES if t in present]


def frame_noise_targets(utts: Sequence[UttFeatures], classes: list[str]) -> np.ndarray:
    index = {c: i for i, c in enumerate(classes)}
    return np.concatenate([np.full(u.features.num_frames, index[u.noise.noise_type])
                           for u in utts])


def _pool(utts: Sequence[UttFeatures], embed=None) -> FeatureMatrix:
    if embed is None:
        return concat_features([u.features for u in utts])
    return concat_features([augment(u.features, embed(u)) for u in utts])


def train_noise_network(train_utts: Sequence[UttFeatures], dev_utts: Sequence[UttFeatures],
                        config: SystemConfig, classes: list[str] | None = None,
                        targets: tuple[np.ndarray, np.ndarray] | None = None):
    """Stage 1: frame-level noise-type classifier with a bottleneck layer.

    Frame targets are the utterance's noise type unless ``targets`` (train,
    dev) overrides them. Returns (network, report, class list).
    """
    classes = classes or noise_classes(train_utts)
    if len(classes) < 2:
        raise InvalidArgumentError("noise network needs at least two noise classes")
    tr, dv = _pool(train_utts), _pool(dev_utts)
    if targets is None:
        ytr, ydv = frame_noise_targets(train_utts, classes), frame_noise_targets(dev_utts, classes)
    else:
        ytr, ydv = targets
    sizes = [tr.dim] + list(config.dnoise_hidden) + [len(classes)]
    net = Network.init(config.network(sizes, 1, bottleneck_index=config.bottleneck_index))
    report = train(net, FeatureMatrix(tr.values, ytr), FeatureMatrix(dv.values, ydv))
    return net, report, classes


def mtl_network_config(input_dim: int, num_content: int, num_noise: int,
                       config: SystemConfig) -> NetworkConfig:
    """Two shared layers (the second E wide), a content branch and a noise head.

    The noise head reuses the layers that follow the bottleneck in the noise
    network; the width of the content branch is chosen so the total
    parameter count is as close as possible to the two-network system.
    """
    e = config.embedding_dim
    if config.mtl_shared_layers != 2:
        raise InvalidArgumentError("MTL shares exactly two hidden layers")
    shared = [config.dnoise_hidden[0], e]
    head = list(config.dnoise_hidden[config.bottleneck_index + 1:]) + [num_noise]
    target = ndnn_parameter_count(input_dim, num_content, num_noise, config)
    depth = len(config.dphoneme_hidden)

    def make(width):
        return config.network([input_dim] + shared + [width] * depth + [num_content], 4,
                              second_head=(len(shared) - 1, head),
                              head2_weight=config.head2_weight)

    lo, hi = 1, 16384
    while lo < hi:
        mid = (lo + hi) // 2
        if count_parameters(make(mid)) < target:
            lo = mid + 1
        else:
            hi = mid
    best = min((max(lo - 1, 1), lo), key=lambda w: abs(count_parameters(make(w)) - target))
    return make(best)


def ndnn_parameter_count(input_dim: int, num_content: int, num_noise: int,
                         config: SystemConfig) -> int:
    dn = config.network([input_dim] + list(config.dnoise_hidden) + [num_noise], 1)
    dp = config.network([input_dim + config.embedding_dim] + list(config.dphoneme_hidden)
                        + [num_content], 2)
    return count_parameters(dn) + count_parameters(dp)


# -------------------------------------------------------------- systems


class AcousticSystem:
    """A trained system; inference takes features only, never noise labels."""

    def __init__(self, method: str, acoustic_model: Network, config: SystemConfig,
                 dnoise: Network | None = None, ubm: iv.Ubm | None = None,
                 tv: iv.TotalVariability | None = None, noise_class_names=(),
                 reports: dict | None = None, lda: LdaTransform | None = None):
        if method not in METHODS:
            raise InvalidArgumentError(f"unknown method {method!r}")
        self.method = method
        self.acoustic_model = acoustic_model
        self.config = config
        self.dnoise = dnoise
        self.ubm = ubm
        self.tv = tv
        self.noise_class_names = list(noise_class_names)
        self.reports = reports or {}
        self.lda = lda

    def embed(self, f: FeatureMatrix) -> NoiseEmbedding | None:
        m = self.method
        if m in ("baseline", "mtl"):
            return None
        if m == "nat":
            return nat_estimate(f)
        if m == "ndnn":
            return extract_embeddings(self.dnoise, f)
        stats = iv.accumulate_stats(self.ubm, f)
        if m == "ivector_offline":
            w = iv.extract_ivector(self.tv, self.ubm, stats).w
            return NoiseEmbedding(w[None, :], per_frame=False)
        return NoiseEmbedding(
            iv.extract_ivector_online(self.tv, self.ubm, f, self.config.online_window))

    def final_features(self, f: FeatureMatrix) -> FeatureMatrix:
        return augment(f, self.embed(f))

    def predict(self, f: FeatureMatrix) -> np.ndarray:
        return self.acoustic_model.predict(self.final_features(f).values)

    def num_parameters(self) -> int:
        n = self.acoustic_model.num_parameters()
        return n + (self.dnoise.num_parameters() if self.dnoise is not None else 0)

    # -- bundle persistence

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        files = {}
        if self.method == "mtl":
            files["mtl_model"] = "mtl.json"
        else:
            files["dphoneme_model"] = "dphoneme.json"
        self.acoustic_model.save(d / next(iter(files.values())))
        if self.dnoise is not None:
            files["dnoise_model"] = "dnoise.json"
            self.dnoise.save(d / "dnoise.json")
        if self.ubm is not None:
            files["ubm"] = "ubm.json"
            self.ubm.save(d / "ubm.json")
        if self.tv is not None:
            files["total_variability"] = "tv.json"
            self.tv.save(d / "tv.json")
        if self.lda is not None:
            files["lda"] = "lda.json"
            (d / "lda.json").write_text(json.dumps(self.lda.to_dict()))
        (d / "train_report.json").write_text(json.dumps(
            {k: r.to_dict() if isinstance(r, TrainReport) else r for k, r in self.reports.items()},
            indent=1, sort_keys=True))
        manifest = {"method": self.method, "files": files, "config": self.config.to_dict(),
                    "noise_classes": self.noise_class_names,
                    "num_parameters": self.num_parameters(),
                    "train_report": "train_report.json"}
        (d / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))

    @classmethod
    def load(cls, directory) -> "AcousticSystem":
        d = Path(directory)
        path = d / "manifest.json"
        if not path.exists():
            raise InvalidStateError(f"{d}: no system bundle (missing manifest.json)")
        man = json.loads(path.read_text())
        files = man["files"]
        am = Network.load(d / files.get("mtl_model", files.get("dphoneme_model", "")))
        dn = Network.load(d / files["dnoise_model"]) if "dnoise_model" in files else None
        ubm = iv.Ubm.load(d / files["ubm"]) if "ubm" in files else None
        tv = iv.TotalVariability.load(d / files["total_variability"]) \
            if "total_variability" in files else None
        lda = LdaTransform.from_dict(json.loads((d / files["lda"]).read_text())) \
            if "lda" in files else None
        return cls(man["method"], am, SystemConfig.from_dict(man["config"]), dn, ubm, tv,
                   man.get("noise_classes", ()), lda=lda)


def _train_ivector_models(train_utts, config: SystemConfig):
    pooled = _pool(train_utts)
    k = min(config.ubm_components, pooled.num_frames)
    ubm = iv.ubm_train(pooled, k, config.ubm_iters, config.seed)
    stats = [iv.accumulate_stats(ubm, u.features) for u in train_utts]
    m = min(config.ivector_dim, ubm.num_components * ubm.dim)
    tv = iv.tmatrix_train(ubm, stats, m, config.tv_iters, config.seed)
    return ubm, tv, stats


def train_system(method: str, train_utts: Sequence[UttFeatures], dev_utts: Sequence[UttFeatures],
                 config: SystemConfig, num_content: int | None = None,
                 lda: LdaTransform | None = None, dnoise: Network | None = None) -> AcousticSystem:
    """Train one system end to end.

    ``ndnn`` trains the noise network first, freezes it, then trains the
    acoustic model on features augmented with its bottleneck activations.
    A pretrained ``dnoise`` skips the first stage. ``mtl`` trains a single
    two-headed network instead.
    """
    if method not in METHODS:
        raise InvalidArgumentError(f"unknown method {method!r}")
    if not train_utts or not dev_utts:
        raise InvalidArgumentError("train and dev sets must be non-empty")
    if any(u.features.labels is None for u in list(train_utts) + list(dev_utts)):
        raise InvalidArgumentError("training needs content labels")
    if num_content is None:
        num_content = int(max(u.features.labels.max() for u in train_utts)) + 1
    input_dim = train_utts[0].features.dim
    reports: dict = {}
    classes = noise_classes(train_utts)

    if method == "mtl":
        if len(classes) < 2:
            raise InvalidArgumentError("MTL needs at least two noise classes")
        cfg = mtl_network_config(input_dim, num_content, len(classes), config)
        net = Network.init(cfg)
        reports["mtl"] = train(net, _pool(train_utts), _pool(dev_utts),
                               frame_noise_targets(train_utts, classes),
                               frame_noise_targets(dev_utts, classes))
        return AcousticSystem(method, net, config, noise_class_names=classes,
                              reports=reports, lda=lda)

    if dnoise is not None and method != "ndnn":
        raise InvalidArgumentError("a pretrained noise network only applies to ndnn")
    ubm = tv = None
    if method == "baseline":
        embed = None
    elif method == "nat":
        def embed(u):
            return nat_estimate(u.features)
    elif method == "ndnn":
        if dnoise is None:
            dnoise, reports["dnoise"], classes = train_noise_network(train_utts, dev_utts, config)

        def embed(u):
            return extract_embeddings(dnoise, u.features)
    elif method == "ivector_offline":
        ubm, tv, stats = _train_ivector_models(train_utts, config)
        # one i-vector per noise type, pooled over its training utterances
        by_type: dict[str, iv.BaumWelchStats] = {}
        for u, s in zip(train_utts, stats):
            key = u.noise.noise_type
            by_type[key] = by_type[key] + s if key in by_type else s
        cond_vec = {k: iv.extract_ivector(tv, ubm, s, scope="condition").w
                    for k, s in by_type.items()}
        reports["ubm_loglik"] = ubm.loglik_history
        reports["tv_objective"] = tv.objective_history

        def embed(u):
            key = u.noise.noise_type
            if key in cond_vec:
                return NoiseEmbedding(cond_vec[key][None, :], per_frame=False)
            w = iv.extract_ivector(tv, ubm, iv.accumulate_stats(ubm, u.features)).w
            return NoiseEmbedding(w[None, :], per_frame=False)
    else:
        ubm, tv, _ = _train_ivector_models(train_utts, config)
        reports["ubm_loglik"] = ubm.loglik_history
        reports["tv_objective"] = tv.objective_history

        def embed(u):
            return NoiseEmbedding(
                iv.extract_ivector_online(tv, ubm, u.features, config.online_window))

    tr = _pool(train_utts, embed)
    dv = _pool(dev_utts, embed)
    sizes = [tr.dim] + list(config.dphoneme_hidden) + [num_content]
    net = Network.init(config.network(sizes, 2))
    reports["dphoneme"] = train(net, tr, dv)
    return AcousticSystem(method, net, config, dnoise, ubm, tv, classes, reports, lda)
