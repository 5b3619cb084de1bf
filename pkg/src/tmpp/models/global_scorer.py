"""Rule-based pair score with quadratic recency weighting.

``score(u, b) = sum over the pair's actions n of alpha[type(n)] * day(n)**2``
with ``day(n) = record_day - day_origin + 1``, so an action on the first
day of the feature span weighs 1 and later actions weigh quadratically
more.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..instances import pair_keys
from ..log_model import ActionRecord, Log
from .base import Model


@dataclass(frozen=True)
class GlobalScorerConfig:
    # click, buy, collect, cart
    alpha: tuple[float, float, float, float] = (1.0, 4.0, 2.0, 3.0)
    day_origin: int = 0

    def __post_init__(self):
        alpha = tuple(float(a) for a in self.alpha)
        object.__setattr__(self, "alpha", alpha)
        if len(alpha) != 4 or not all(np.isfinite(alpha)):
            raise ValueError("alpha needs four finite weights (click, buy, collect, cart)")


def global_score(history, config: GlobalScorerConfig = GlobalScorerConfig()) -> float:
    """Score one pair from its records (any iterable of :class:`ActionRecord`)."""
    total = 0.0
    for rec in history:
        if not isinstance(rec, ActionRecord):
            rec = ActionRecord(*rec)
        day = rec.day - config.day_origin + 1
        total += config.alpha[int(rec.action)] * day * day
    return total


class GlobalScorer(Model):
    kind = "global"
    config_cls = GlobalScorerConfig

    def __init__(self, config=None, scheme=None):
        super().__init__(config, None)

    def fit(self, instances=None, log=None):
        return self

    def score(self, instances, log: Log = None) -> np.ndarray:
        if log is None:
            raise ValueError("the global scorer needs the raw log to score instances")
        out = np.zeros(len(instances))
        if len(instances) == 0 or len(log) == 0:
            return out
        alpha = np.asarray(self.config.alpha)
        origin = self.config.day_origin
        users = np.unique(np.concatenate([instances.user, log.user]))
        brands = np.unique(np.concatenate([instances.brand, log.brand]))
        rec_key = pair_keys(log.user, log.brand, users, brands)
        inst_key = pair_keys(instances.user, instances.brand, users, brands)
        day = log.day.astype(np.float64) - origin + 1
        weight = alpha[log.action] * day * day
        for fe in np.unique(instances.feature_end).tolist():
            rows = np.flatnonzero(instances.feature_end == fe)
            m = (log.day >= origin) & (log.day < fe)
            keys, inv = np.unique(rec_key[m], return_inverse=True)
            sums = np.bincount(inv, weights=weight[m], minlength=len(keys))
            pos = np.searchsorted(keys, inst_key[rows])
            pos_c = np.minimum(pos, max(len(keys) - 1, 0))
            hit = (pos < len(keys)) & (keys[pos_c] == inst_key[rows]) if len(keys) else np.zeros(len(rows), bool)
            out[rows[hit]] = sums[pos_c[hit]]
        return out

    def _params(self):
        return {}

    def _load_params(self, params):
        pass
