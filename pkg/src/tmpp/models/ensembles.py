"""Gradient-boosted regression trees and random forests."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..sharding import ordered_map, substream
from .base import Model, check_training, validate_matrix
from .tree import BinnedFeatures, Tree, grow_tree


@dataclass(frozen=True)
class GbrtConfig:
    n_trees: int = 40
    max_depth: int = 4
    shrinkage: float = 0.1
    min_samples_leaf: int = 20
    target: str = "label"

    def __post_init__(self):
        if self.n_trees < 0 or self.max_depth < 1 or self.min_samples_leaf < 1:
            raise ValueError("n_trees >= 0, max_depth >= 1 and min_samples_leaf >= 1 required")
        if not 0 < self.shrinkage <= 1:
            raise ValueError("shrinkage must be in (0, 1]")
        if self.target not in ("label", "buy_count"):
            raise ValueError("target must be 'label' or 'buy_count'")


@dataclass(frozen=True)
class RfConfig:
    n_trees: int = 30
    max_depth: int = 10
    max_features: int | None = None  # None -> sqrt(d)
    bootstrap: bool = True
    seed: int = 0
    min_samples_leaf: int = 5
    max_samples: int | None = None  # bootstrap draw size, None -> n
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_trees < 1 or self.max_depth < 1 or self.min_samples_leaf < 1:
            raise ValueError("n_trees, max_depth and min_samples_leaf must be positive")
        if self.max_features is not None and self.max_features < 1:
            raise ValueError("max_features must be positive")


def _binned(instances, cache: dict | None):
    if cache is not None and id(instances.X) in cache:
        return cache[id(instances.X)]
    b = BinnedFeatures(instances.X)
    if cache is not None:
        cache[id(instances.X)] = b
    return b


class GradientBoostedTrees(Model):
    """Stagewise squared-error boosting; score = mean + shrinkage * sum(trees)."""

    kind = "gbrt"
    config_cls = GbrtConfig

    def __init__(self, config=None, scheme="fixed"):
        super().__init__(config, scheme)
        self.init = 0.0
        self.trees: list[Tree] = []
        self.train_mse: list[float] = []

    def _target(self, instances):
        src = instances.label if self.config.target == "label" else instances.buy_count
        return src.astype(np.float64)

    def fit(self, instances, log=None, binned_cache: dict | None = None):
        check_training(instances)
        self._remember_schema(instances)
        cfg = self.config
        y = self._target(instances)
        binned = _binned(instances, binned_cache)
        self.init = float(y.mean())
        pred = np.full(len(y), self.init)
        self.trees = []
        self.train_mse = [float(np.mean((y - pred) ** 2))]
        for _ in range(cfg.n_trees):
            tree = grow_tree(binned, y - pred, max_depth=cfg.max_depth, min_samples_leaf=cfg.min_samples_leaf)
            pred += cfg.shrinkage * tree.predict(instances.X)
            self.trees.append(tree)
            self.train_mse.append(float(np.mean((y - pred) ** 2)))
        return self

    def score(self, instances, log=None):
        self._check_schema(instances)
        validate_matrix(instances.X)
        out = np.full(len(instances), self.init)
        for tree in self.trees:
            out += self.config.shrinkage * tree.predict(instances.X)
        return out

    def _params(self):
        return {"init": self.init, "trees": [t.to_dict() for t in self.trees]}

    def _load_params(self, p):
        self.init = float(p["init"])
        self.trees = [Tree.from_dict(t) for t in p["trees"]]


class RandomForest(Model):
    """Bootstrap forest of Gini trees; score = mean leaf positive rate."""

    kind = "rf"
    config_cls = RfConfig
    _RUNTIME_FIELDS = ("n_jobs",)

    def __init__(self, config=None, scheme="fixed"):
        super().__init__(config, scheme)
        self.trees: list[Tree] = []
        self.oob_score: np.ndarray | None = None

    def _draw(self, i: int, n: int):
        cfg = self.config
        rng = substream(cfg.seed, "rf-tree", i)
        if cfg.bootstrap:
            m = n if cfg.max_samples is None else min(cfg.max_samples, n)
            weight = np.bincount(rng.integers(0, n, m), minlength=n).astype(np.float64)
        else:
            weight = np.ones(n)
        return rng, weight

    def fit(self, instances, log=None, binned_cache: dict | None = None):
        check_training(instances)
        self._remember_schema(instances)
        cfg = self.config
        y = instances.label.astype(np.float64)
        binned = _binned(instances, binned_cache)
        n, d = binned.n, binned.d
        m = cfg.max_features if cfg.max_features is not None else max(1, int(np.sqrt(d)))
        m = min(m, d)

        def one(i):
            rng, weight = self._draw(i, n)
            return grow_tree(binned, y, weight, cfg.max_depth, cfg.min_samples_leaf, m, rng)

        self.trees = ordered_map(one, list(range(cfg.n_trees)), cfg.n_jobs)
        self._compute_oob(instances.X, n)
        return self

    def _compute_oob(self, X, n):
        if not self.config.bootstrap:
            self.oob_score = None
            return
        total = np.zeros(n)
        count = np.zeros(n)
        for i, tree in enumerate(self.trees):
            _, weight = self._draw(i, n)
            oob = weight == 0
            total[oob] += tree.predict(X[oob])
            count[oob] += 1
        with np.errstate(invalid="ignore", divide="ignore"):
            self.oob_score = np.where(count > 0, total / count, np.nan)

    def score(self, instances, log=None):
        self._check_schema(instances)
        validate_matrix(instances.X)
        out = np.zeros(len(instances))
        for tree in self.trees:
            out += tree.predict(instances.X)
        return out / len(self.trees)

    def _params(self):
        return {"trees": [t.to_dict() for t in self.trees]}

    def _load_params(self, p):
        self.trees = [Tree.from_dict(t) for t in p["trees"]]
