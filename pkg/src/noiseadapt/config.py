"""Experiment configuration: built-in profiles, YAML files and run ids."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import __version__
from .adaptation import METHODS, SystemConfig
from .errors import InvalidArgumentError
from .pipeline import FeatureParams
from .signal_corpus import CorpusRecipe

_IN_DOMAIN = ["clean", "white:0", "white:10", "music:0", "music:10", "reverb:0.6", "reverb:1.0"]

PROFILES: dict[str, dict] = {
    "desk": {
        "seed": 1,
        "output": "runs/desk",
        "corpus": {
            "conditions": _IN_DOMAIN,
            "utterances_per_condition": 160,
            "split_ratios": [0.6, 0.1, 0.3],
            "unseen_conditions": ["street:0", "street:5", "street:10"],
            "unseen_utterances_per_condition": 30,
            "content_classes": 24,
            "segments_per_utterance": 4,
            "segment_ms": 250.0,
        },
        "features": {},
        "system": {},
        "methods": list(METHODS),
        "scatter": {"n_points": 700, "split": "test"},
    },
    "full": {
        "seed": 1,
        "output": "runs/full",
        "corpus": {
            "conditions": _IN_DOMAIN,
            "utterances_per_condition": 1000,
            "split_ratios": [0.7, 0.1, 0.2],
            "unseen_conditions": ["street:0", "street:5", "street:10"],
            "unseen_utterances_per_condition": 200,
            "content_classes": 41,
            "segments_per_utterance": 8,
            "segment_ms": 250.0,
        },
        "features": {},
        "system": {
            "dnoise_hidden": [1024, 1024, 1024, 40, 1024],
            "dphoneme_hidden": [2048] * 7,
            "ubm_components": 2048,
            "ivector_dim": 40,
            "epochs": 20,
        },
        "methods": list(METHODS),
        "scatter": {"n_points": 700, "split": "test"},
    },
}

_SECTIONS = {"profile", "seed", "output", "corpus", "features", "system", "methods", "scatter"}


@dataclass
class ExperimentConfig:
    profile: str
    seed: int
    output: Path
    corpus: CorpusRecipe
    features: FeatureParams
    system: SystemConfig
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    scatter_points: int = 700
    scatter_split: str = "test"

    def to_dict(self) -> dict:
        """Everything that determines the results (the output path does not)."""
        return {"profile": self.profile, "seed": self.seed, "corpus": self.corpus.to_dict(),
                "features": self.features.to_dict(), "system": self.system.to_dict(),
                "methods": list(self.methods),
                "scatter": {"n_points": self.scatter_points, "split": self.scatter_split}}

    @property
    def run_id(self) -> str:
        blob = json.dumps({"config": self.to_dict(), "version": __version__}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path=None, profile: str | None = None, seed: int | None = None,
                output=None) -> ExperimentConfig:
    """Profile defaults, then the YAML file, then explicit overrides."""
    doc: dict = {}
    if path is not None:
        try:
            doc = yaml.safe_load(Path(path).read_text()) or {}
        except OSError as exc:
            raise InvalidArgumentError(f"cannot read config {path}: {exc.strerror}") from None
        except yaml.YAMLError as exc:
            raise InvalidArgumentError(f"config {path} is not valid YAML: "
                                       f"{str(exc).splitlines()[0]}") from None
        if not isinstance(doc, dict):
            raise InvalidArgumentError(f"config {path} must be a mapping")
        unknown = set(doc) - _SECTIONS
        if unknown:
            raise InvalidArgumentError(f"unknown config keys: {', '.join(sorted(unknown))}")
    name = profile or doc.get("profile") or "desk"
    if name not in PROFILES:
        raise InvalidArgumentError(f"unknown profile {name!r} (choose from {', '.join(PROFILES)})")
    d = _merge(PROFILES[name], {k: v for k, v in doc.items() if k != "profile"})
    if seed is not None:
        d["seed"] = seed
    if output is not None:
        d["output"] = str(output)
    methods = list(d["methods"])
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise InvalidArgumentError(f"unknown methods: {', '.join(bad)}")
    try:
        corpus = CorpusRecipe.from_dict({**d["corpus"], "seed": int(d["seed"])})
        features = FeatureParams(**d["features"])
        system = SystemConfig(**{**d["system"], "seed": int(d["seed"])})
    except TypeError as exc:
        raise InvalidArgumentError(f"bad config entry: {exc}") from None
    scatter = d.get("scatter", {})
    return ExperimentConfig(name, int(d["seed"]), Path(d["output"]), corpus, features, system,
                            methods, int(scatter.get("n_points", 700)),
                            str(scatter.get("split", "test")))
