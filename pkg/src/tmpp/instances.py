"""Time-dependent (user, brand) instances.

An instance lives at a *feature end* day ``e``: its features come from
records with ``day < e`` and its target from Buy records in the target span
that starts at ``e``.  Fixed schemes use one feature end; sliding schemes
use several and take the union of the per-end instance sets.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .log_model import ActionType, Log, Month
from .sharding import ordered_map, shard_of

DEFAULT_TARGET_DAYS = 28
_MONTH_STARTS = {m.first_day: m for m in Month}


def target_span(feature_end: int, target_days: int = DEFAULT_TARGET_DAYS) -> tuple[int, int]:
    """Half-open target span following ``feature_end``.

    The competition month starting at ``feature_end`` when aligned,
    otherwise the next ``target_days`` days.
    """
    month = _MONTH_STARTS.get(feature_end)
    if month is not None:
        return feature_end, month.last_day + 1
    return feature_end, feature_end + target_days


@dataclass(frozen=True)
class TimeSpanConfig:
    scheme: str
    feature_end_days: tuple[int, ...]
    target_days: int = DEFAULT_TARGET_DAYS

    def __post_init__(self):
        ends = tuple(int(e) for e in self.feature_end_days)
        object.__setattr__(self, "feature_end_days", ends)
        if self.scheme not in ("fixed", "sliding"):
            raise ValueError(f"unknown time-span scheme {self.scheme!r}")
        if not ends:
            raise ValueError("at least one feature end day is required")
        if self.scheme == "fixed" and len(ends) != 1:
            raise ValueError("a fixed scheme has exactly one feature end")
        if any(b <= a for a, b in zip(ends, ends[1:])):
            raise ValueError("feature end days must be strictly increasing")
        if self.target_days < 1:
            raise ValueError("target_days must be positive")

    def spans(self) -> list[tuple[int, tuple[int, int]]]:
        return [(e, target_span(e, self.target_days)) for e in self.feature_end_days]

    @classmethod
    def fixed_for(cls, visible_end: int) -> "TimeSpanConfig":
        """Last visible month as target, everything before as features."""
        return cls("fixed", (_last_month_start(visible_end),))

    @classmethod
    def sliding_for(cls, visible_end: int, stride: int = 20, n_ends: int = 2) -> "TimeSpanConfig":
        last = _last_month_start(visible_end)
        return cls("sliding", tuple(last - stride * i for i in reversed(range(n_ends))))


def _last_month_start(visible_end: int) -> int:
    for m in reversed(Month):
        if m.last_day + 1 == visible_end:
            return m.first_day
    raise ValueError(f"visible end {visible_end} is not a month boundary")


@dataclass
class InstanceSet:
    """Column store of instances, canonically ordered by (feature_end, user, brand)."""

    user: np.ndarray
    brand: np.ndarray
    feature_end: np.ndarray
    label: np.ndarray | None = None
    buy_count: np.ndarray | None = None
    X: np.ndarray | None = None
    schema: object | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.user)

    @property
    def has_targets(self) -> bool:
        return self.label is not None

    def take(self, idx) -> "InstanceSet":
        def sel(a):
            return None if a is None else a[idx]

        return InstanceSet(
            self.user[idx], self.brand[idx], self.feature_end[idx],
            sel(self.label), sel(self.buy_count), sel(self.X), self.schema,
        )

    def keys(self) -> list[tuple[int, int, int]]:
        return list(zip(self.feature_end.tolist(), self.user.tolist(), self.brand.tolist()))

    @staticmethod
    def concat(parts: list["InstanceSet"]) -> "InstanceSet":
        parts = [p for p in parts]
        if not parts:
            return empty_instances()

        def cat(name):
            cols = [getattr(p, name) for p in parts]
            return None if any(c is None for c in cols) else np.concatenate(cols)

        return InstanceSet(
            cat("user"), cat("brand"), cat("feature_end"),
            cat("label"), cat("buy_count"), cat("X"), parts[0].schema,
        )

    def canonical(self) -> "InstanceSet":
        order = np.lexsort((self.brand, self.user, self.feature_end))
        return self.take(order)


def empty_instances(with_targets: bool = False) -> InstanceSet:
    z = np.empty(0, np.int64)
    return InstanceSet(z, z.copy(), z.copy(), z.astype(np.int8) if with_targets else None,
                       z.copy() if with_targets else None)


def pair_keys(user: np.ndarray, brand: np.ndarray, users: np.ndarray, brands: np.ndarray) -> np.ndarray:
    """Dense int64 keys for (user, brand), given sorted vocabularies containing them."""
    return np.searchsorted(users, user).astype(np.int64) * len(brands) + np.searchsorted(brands, brand)


def candidate_pairs(log: Log, feature_end: int, window_start: int = 0) -> np.ndarray:
    """Sorted ``(n, 2)`` array of pairs with any action in ``[window_start, feature_end)``."""
    hist = log.window(window_start, feature_end)
    if len(hist) == 0:
        return np.empty((0, 2), np.int64)
    users = np.unique(hist.user)
    brands = np.unique(hist.brand)
    keys = np.unique(pair_keys(hist.user, hist.brand, users, brands))
    return np.stack([users[keys // len(brands)], brands[keys % len(brands)]], axis=1)


def assign_targets(pairs: np.ndarray, log: Log, span: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """(label, buy_count) for each pair from its Buy records inside ``span``."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    start, end = span
    buys = log.take((log.action == ActionType.BUY) & (log.day >= start) & (log.day < end))
    count = np.zeros(len(pairs), np.int64)
    if len(buys) and len(pairs):
        users = np.unique(np.concatenate([pairs[:, 0], buys.user]))
        brands = np.unique(np.concatenate([pairs[:, 1], buys.brand]))
        bkeys, bcount = np.unique(pair_keys(buys.user, buys.brand, users, brands), return_counts=True)
        pkeys = pair_keys(pairs[:, 0], pairs[:, 1], users, brands)
        pos = np.searchsorted(bkeys, pkeys)
        pos_c = np.minimum(pos, len(bkeys) - 1)
        hit = bkeys[pos_c] == pkeys
        count[hit] = bcount[pos_c[hit]]
    return (count > 0).astype(np.int8), count


def _build_at(log: Log, end: int, span, window_start: int, with_targets: bool) -> InstanceSet:
    pairs = candidate_pairs(log, end, window_start)
    n = len(pairs)
    inst = InstanceSet(pairs[:, 0].copy(), pairs[:, 1].copy(), np.full(n, end, np.int64))
    if with_targets:
        inst.label, inst.buy_count = assign_targets(pairs, log, span)
    return inst


def _sharded(log: Log, shards: int, fn) -> InstanceSet:
    if shards <= 1:
        return fn(log).canonical()
    sid = shard_of(log.user, shards)
    parts = ordered_map(lambda s: fn(log.take(sid == s)), list(range(shards)), shards)
    return InstanceSet.concat(parts).canonical()


def build_training_set(
    log: Log,
    config: TimeSpanConfig,
    window: tuple[int, int] | None = None,
    shards: int = 1,
) -> InstanceSet:
    """Instances with targets for every feature end of ``config``.

    ``window`` is the visible ``[start, end)``; it defaults to the log's own
    day range.  A target span reaching past the window end is an error.
    """
    start, end = window if window is not None else log.day_range
    for fe, (ts, te) in config.spans():
        if fe <= start or te > end:
            raise ValueError(
                f"span feature_end={fe}, target=[{ts},{te}) exceeds the log window [{start},{end})"
            )

    def build(part: Log) -> InstanceSet:
        sets = [_build_at(part, fe, span, start, True) for fe, span in config.spans()]
        return InstanceSet.concat(sets)

    return _sharded(log, shards, build)


def build_prediction_set(
    log: Log, window: tuple[int, int] | None = None, shards: int = 1
) -> InstanceSet:
    """Target-free instances at the end of the visible window."""
    if window is None and len(log) == 0:
        return empty_instances()
    start, end = window if window is not None else log.day_range
    return _sharded(log, shards, lambda part: _build_at(part, end, None, start, False))
