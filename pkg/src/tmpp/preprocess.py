"""Crawler cleansing and month-based local/online splitting."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .log_model import ActionType, Log, Month, months_of
from .sharding import ordered_map, shard_of

DEFAULT_CLICK_THRESHOLD = 500


@dataclass(frozen=True)
class SplitSpec:
    feature_months: tuple[Month, ...]
    answer_month: Month

    def __post_init__(self):
        months = tuple(sorted(Month(m) for m in self.feature_months))
        object.__setattr__(self, "feature_months", months)
        object.__setattr__(self, "answer_month", Month(self.answer_month))
        if not months:
            raise ValueError("SplitSpec needs at least one feature month")
        if self.answer_month in months:
            raise ValueError("answer month overlaps the feature months")
        span = sorted(months + (self.answer_month,))
        if any(b - a != 1 for a, b in zip(span, span[1:])):
            raise ValueError("feature and answer months must be contiguous")

    @property
    def visible_end(self) -> int:
        """One past the last visible day."""
        return self.feature_months[-1].last_day + 1

    @property
    def visible_start(self) -> int:
        return self.feature_months[0].first_day

    @property
    def answer_span(self) -> tuple[int, int]:
        return self.answer_month.first_day, self.answer_month.last_day + 1


# Apr-Jun visible, July answer
LOCAL_SPLIT = SplitSpec((Month.APRIL, Month.MAY, Month.JUNE), Month.JULY)


def _user_counts(log: Log) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    uid, inv = np.unique(log.user, return_inverse=True)
    clicks = np.bincount(inv, weights=log.action == ActionType.CLICK, minlength=len(uid))
    buys = np.bincount(inv, weights=log.action == ActionType.BUY, minlength=len(uid))
    return uid, clicks.astype(np.int64), buys.astype(np.int64)


def crawler_users(log: Log, click_threshold: int = DEFAULT_CLICK_THRESHOLD, shards: int = 1) -> np.ndarray:
    """Sorted ids of users with more than ``click_threshold`` clicks and no buys."""
    if len(log) == 0:
        return np.empty(0, np.int64)
    if shards <= 1:
        parts = [log]
    else:
        sid = shard_of(log.user, shards)
        parts = [log.take(sid == s) for s in range(shards)]

    def flagged(part: Log) -> np.ndarray:
        if len(part) == 0:
            return np.empty(0, np.int64)
        uid, clicks, buys = _user_counts(part)
        return uid[(clicks > click_threshold) & (buys == 0)]

    # users never straddle shards, so per-shard decisions are final
    return np.sort(np.concatenate(ordered_map(flagged, parts, shards)))


def cleanse(
    log: Log, click_threshold: int = DEFAULT_CLICK_THRESHOLD, shards: int = 1
) -> tuple[Log, np.ndarray]:
    """Drop every record of users with > ``click_threshold`` clicks and zero buys.

    Counts run over the whole input log.  Returns the filtered log (order
    preserved) and the sorted removed user ids.
    """
    removed = crawler_users(log, click_threshold, shards)
    if len(removed) == 0:
        return log, removed
    return log.take(~np.isin(log.user, removed)), removed


def answer_pairs(log: Log, start: int, end: int) -> dict[int, set[int]]:
    """user -> brands with at least one Buy in ``[start, end)``."""
    buys = log.take((log.action == ActionType.BUY) & (log.day >= start) & (log.day < end))
    pairs = np.unique(np.stack([buys.user, buys.brand], axis=1), axis=0) if len(buys) else []
    out: dict[int, set[int]] = {}
    for u, b in (pairs.tolist() if len(buys) else []):
        out.setdefault(u, set()).add(b)
    return out


def split(log: Log, spec: SplitSpec = LOCAL_SPLIT) -> tuple[Log, dict[int, set[int]]]:
    """Visible records of the feature months, plus the answer-month buyer pairs."""
    month = months_of(log.day) if len(log) else np.empty(0, np.int8)
    visible = log.take(np.isin(month, [int(m) for m in spec.feature_months]))
    start, end = spec.answer_span
    return visible, answer_pairs(log, start, end)


def answer_log(log: Log, spec: SplitSpec = LOCAL_SPLIT) -> Log:
    """Raw Buy records of the answer month."""
    start, end = spec.answer_span
    return log.take((log.action == ActionType.BUY) & (log.day >= start) & (log.day < end))
