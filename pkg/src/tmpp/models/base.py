"""Common model surface and the JSON model-file container."""
from __future__ import annotations

import json
import os
from dataclasses import asdict

import numpy as np

from ..instances import InstanceSet

FORMAT = "tmpp-model"
FORMAT_VERSION = 1


class Model:
    """A scorer where larger means more likely to buy.

    Subclasses set ``kind`` and implement ``fit``, ``score``,
    ``_params`` and ``_load_params``.
    """

    kind = "base"
    config_cls = None

    def __init__(self, config=None, scheme: str | None = None):
        self.config = config if config is not None else self.config_cls()
        self.scheme = scheme
        self.schema_hash: str | None = None

    @property
    def name(self) -> str:
        return self.kind if self.scheme is None else f"{self.kind}_{self.scheme}"

    def fit(self, instances: InstanceSet, log=None) -> "Model":
        raise NotImplementedError

    def score(self, instances: InstanceSet, log=None) -> np.ndarray:
        raise NotImplementedError

    def _check_schema(self, instances: InstanceSet) -> None:
        if self.schema_hash is None or instances.schema is None:
            return
        got = instances.schema.hash()
        if got != self.schema_hash:
            raise ValueError(
                f"model {self.name} was trained on feature schema {self.schema_hash}, "
                f"instances carry {got}"
            )

    def _remember_schema(self, instances: InstanceSet) -> None:
        self.schema_hash = instances.schema.hash() if instances.schema is not None else None

    # -- serialization -------------------------------------------------------

    def _params(self) -> dict:
        raise NotImplementedError

    def _load_params(self, params: dict) -> None:
        raise NotImplementedError

    # execution settings that do not change the fitted model
    _RUNTIME_FIELDS: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        config = {k: v for k, v in asdict(self.config).items() if k not in self._RUNTIME_FIELDS}
        return {
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "model": self.kind,
            "scheme": self.scheme,
            "config": config,
            "schema_hash": self.schema_hash,
            "params": self._params(),
        }

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, separators=(",", ":"))
            fh.write("\n")


def validate_matrix(X: np.ndarray) -> None:
    if X is None:
        raise ValueError("instances carry no feature matrix; run feature extraction first")
    if not np.all(np.isfinite(X)):
        raise ValueError("feature matrix contains non-finite values")


def check_training(instances: InstanceSet, need_features: bool = True) -> None:
    if len(instances) == 0:
        raise ValueError("empty training set")
    if not instances.has_targets:
        raise ValueError("training instances carry no targets")
    if need_features:
        validate_matrix(instances.X)
