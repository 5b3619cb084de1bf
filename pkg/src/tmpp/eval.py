"""Local F1 metric, hit-day analysis and trivial baseline predictors."""
from __future__ import annotations

import io
from collections.abc import Mapping
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .ensemble import PredictionSet
from .instances import candidate_pairs
from .log_model import ActionType, Log
from .sharding import substream


@dataclass(frozen=True)
class EvaluationReport:
    """Precision over predicted users, recall over answer users, and F1.

    ``total_predicted``, ``total_answer`` and ``total_hits`` are the sums of
    pBrand, bBrand and hitBrand over N predicted and M answer users.
    """

    precision: float
    recall: float
    f1: float
    n_pred_users: int
    n_answer_users: int
    total_predicted: int
    total_answer: int
    total_hits: int
    per_user_hits: dict = field(default_factory=dict, repr=False, compare=False)

    def exact(self) -> tuple[Fraction, Fraction, Fraction]:
        """Rational precision, recall and F1."""
        p = Fraction(self.total_hits, self.total_predicted) if self.total_predicted else Fraction(0)
        r = Fraction(self.total_hits, self.total_answer) if self.total_answer else Fraction(0)
        f = 2 * p * r / (p + r) if p + r else Fraction(0)
        return p, r, f

    _FIELDS = ("precision", "recall", "f1", "n_pred_users", "n_answer_users",
               "total_predicted", "total_answer", "total_hits")

    def to_text(self) -> str:
        rows = []
        for name in self._FIELDS:
            v = getattr(self, name)
            rows.append((name, f"{v:.6f}" if isinstance(v, float) else str(v)))
        width = max(len(n) for n, _ in rows)
        return "".join(f"{n:<{width}}  {v}\n" for n, v in rows)

    def to_csv(self) -> str:
        return "metric,value\n" + "".join(f"{n},{getattr(self, n)!r}\n" for n in self._FIELDS)


def evaluate(pred: Mapping, answer: Mapping) -> EvaluationReport:
    pred = pred if isinstance(pred, PredictionSet) else PredictionSet(pred)
    answer = answer if isinstance(answer, PredictionSet) else PredictionSet(answer)
    hits = {}
    for u, brands in pred.items():
        h = len(brands & answer.get(u, frozenset()))
        if h:
            hits[u] = h
    total_hits = sum(hits.values())
    p, r, f = EvaluationReport(0, 0, 0, 0, 0, pred.n_pairs, answer.n_pairs, total_hits).exact()
    return EvaluationReport(float(p), float(r), float(f), len(pred), len(answer),
                            pred.n_pairs, answer.n_pairs, total_hits, hits)


def hit_day_histogram(pred: Mapping, answer_log: Log, target_span: tuple[int, int]) -> np.ndarray:
    """Hits by offset of the pair's first buy in the target span.

    Entry ``i`` counts hits whose first buy falls on target day ``i + 1``.
    """
    start, end = target_span
    hist = np.zeros(end - start, dtype=np.int64)
    m = (answer_log.action == ActionType.BUY) & (answer_log.day >= start) & (answer_log.day < end)
    buys = answer_log.take(m)
    first: dict[tuple[int, int], int] = {}
    for u, b, d in zip(buys.user.tolist(), buys.brand.tolist(), buys.day.tolist()):
        if d < first.get((u, b), end):
            first[(u, b)] = d
    for u, brands in pred.items():
        for b in brands:
            d = first.get((u, b))
            if d is not None:
                hist[d - start] += 1
    return hist


def histogram_csv(hist) -> str:
    out = io.StringIO()
    out.write("day_offset,hits\n")
    for i, h in enumerate(np.asarray(hist).tolist(), 1):
        out.write(f"{i},{h}\n")
    return out.getvalue()


def early_share(hist, fraction: float = 0.25) -> float:
    """Share of hits in the first ``fraction`` of target days."""
    hist = np.asarray(hist)
    total = hist.sum()
    return float(hist[: int(np.ceil(fraction * len(hist)))].sum() / total) if total else 0.0


# -- baselines ------------------------------------------------------------------------

BASELINES = ("random", "popularity", "repeat-buyer")


def baseline_predict(kind: str, log: Log, params: Mapping | None = None) -> PredictionSet:
    """Yardstick predictions from the visible log.

    ``random``: ``n_pairs`` candidate pairs drawn uniformly with ``seed``.
    ``popularity``: the ``top_brands`` most bought brands for every user
    active in the last ``recent_days``.
    ``repeat-buyer``: pairs with at least ``min_buys`` buys in the last
    ``recent_days`` (whole span by default).
    """
    params = dict(params or {})
    if len(log) == 0:
        return PredictionSet()
    end = int(params.get("feature_end", int(log.day.max()) + 1))
    recent = params.get("recent_days")
    lo = 0 if recent is None else end - int(recent)
    window = log.take((log.day >= lo) & (log.day < end))
    if kind == "random":
        pairs = candidate_pairs(log, end)
        n = min(int(params.get("n_pairs", 1000)), len(pairs))
        rng = substream(int(params.get("seed", 0)), "baseline-random")
        pick = np.sort(rng.choice(len(pairs), size=n, replace=False))
        return PredictionSet.from_arrays(pairs[pick, 0], pairs[pick, 1])
    if kind == "popularity":
        buys = log.take((log.action == ActionType.BUY) & (log.day < end))
        top = int(params.get("top_brands", 1))
        brands, counts = np.unique(buys.brand, return_counts=True)
        # most buys first, ties to lower brand id
        best = brands[np.lexsort((brands, -counts))][:top]
        users = np.unique(window.user)
        return PredictionSet({int(u): set(best.tolist()) for u in users})
    if kind == "repeat-buyer":
        buys = window.take(window.action == ActionType.BUY)
        need = int(params.get("min_buys", 1))
        pairs, counts = np.unique(np.stack([buys.user, buys.brand], axis=1), axis=0, return_counts=True) \
            if len(buys) else (np.empty((0, 2), np.int64), np.empty(0))
        keep = pairs[counts >= need]
        return PredictionSet.from_arrays(keep[:, 0], keep[:, 1])
    raise ValueError(f"unknown baseline {kind!r}; choose from {BASELINES}")
