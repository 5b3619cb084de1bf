"""Individual purchase models and the (model, time-span scheme) registry."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

from .base import FORMAT, FORMAT_VERSION, Model
from .ensembles import GbrtConfig, GradientBoostedTrees, RandomForest, RfConfig
from .global_scorer import GlobalScorer, GlobalScorerConfig, global_score
from .linear import LogisticRegression, LrConfig, logistic_loss_grad, sigmoid
from .tree import BinnedFeatures, Tree, grow_tree

MODEL_CLASSES = {
    "lr": LogisticRegression,
    "gbrt": GradientBoostedTrees,
    "rf": RandomForest,
    "global": GlobalScorer,
}

# which schemes each learner may be trained under; the global scorer is untrained
ALLOWED_SCHEMES = {
    "lr": ("fixed",),
    "gbrt": ("fixed", "sliding"),
    "rf": ("fixed", "sliding"),
    "global": (None,),
}


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    scheme: str | None

    @property
    def name(self) -> str:
        return self.kind if self.scheme is None else f"{self.kind}_{self.scheme}"


REGISTRY = (
    ModelSpec("lr", "fixed"),
    ModelSpec("gbrt", "fixed"),
    ModelSpec("gbrt", "sliding"),
    ModelSpec("rf", "fixed"),
    ModelSpec("rf", "sliding"),
    ModelSpec("global", None),
)


def make_model(kind: str, scheme: str | None, config=None) -> Model:
    if kind not in MODEL_CLASSES:
        raise ValueError(f"unknown model {kind!r}; choose from {sorted(MODEL_CLASSES)}")
    if kind == "global":
        scheme = None
    if scheme not in ALLOWED_SCHEMES[kind]:
        raise ValueError(f"model {kind!r} is not trained under the {scheme!r} scheme")
    return MODEL_CLASSES[kind](config, scheme)


def model_from_dict(d: dict) -> Model:
    if d.get("format") != FORMAT:
        raise ValueError("not a tmpp model file")
    if d.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model file version {d.get('version')}")
    cls = MODEL_CLASSES[d["model"]]
    config = cls.config_cls(**d["config"])
    model = make_model(d["model"], d["scheme"], config)
    model.schema_hash = d["schema_hash"]
    model._load_params(d["params"])
    return model


def load_model(path: str | os.PathLike) -> Model:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))


__all__ = [
    "ALLOWED_SCHEMES", "BinnedFeatures", "GbrtConfig", "GlobalScorer", "GlobalScorerConfig",
    "GradientBoostedTrees", "LogisticRegression", "LrConfig", "MODEL_CLASSES", "Model",
    "ModelSpec", "REGISTRY", "RandomForest", "RfConfig", "Tree", "global_score", "grow_tree",
    "load_model", "logistic_loss_grad", "make_model", "model_from_dict", "sigmoid",
]
