"""Feature extraction for (user, brand) instances.

Features come in four families (counting, ratio, flag, global) at three
granularities (pair, user, brand).  Counting, ratio and flag features are
repeated for each date bucket ``[feature_end - k, feature_end)``; global
features cover the whole feature span.

Pair and user tables are user-local and computed per user-hash shard.
Brand tables need every user, so each shard contributes additive
per-(brand, action, day) histograms that are summed in shard order before
the brand features are derived.  All merged quantities are integer
counts, which makes the result independent of the shard count.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .instances import InstanceSet, pair_keys
from .log_model import ActionType, Log, months_of
from .sharding import ordered_map, shard_of

DEFAULT_BUCKETS = (1, 3, 7, 15, 30, 1000)
GLOBAL = "GLOBAL"

_ACT = ("click", "buy", "collect", "cart")
_CLICK, _BUY = int(ActionType.CLICK), int(ActionType.BUY)

_BASE_COUNT = [*_ACT, "total", *(f"days_{a}" for a in _ACT)]
CATALOG = {
    ("pair", "count"): _BASE_COUNT + ["valid_click"],
    ("user", "count"): _BASE_COUNT + [f"distinct_brands_{a}" for a in _ACT] + ["first_brands"],
    ("brand", "count"): _BASE_COUNT + [f"distinct_users_{a}" for a in _ACT] + ["first_users"],
    ("pair", "ratio"): ["conv_buy", "conv_buy_days"] + [f"share_{a}" for a in (*_ACT, "total")],
    ("user", "ratio"): ["conv_buy", "conv_buy_days", "click_per_day", "buy_per_day",
                        "buy_per_brand", "click_per_brand"],
    ("brand", "ratio"): ["conv_buy", "conv_buy_days", "click_per_day", "buy_per_day",
                         "buy_per_user", "click_per_user"],
    ("pair", "flag"): [f"has_{a}" for a in _ACT] + ["consec_buy"],
    ("user", "flag"): [f"has_{a}" for a in _ACT] + ["consec_buy"],
    ("brand", "flag"): [f"has_{a}" for a in _ACT] + ["consec_buy"],
    ("pair", "global"): ["first_dist", "last_dist", "last_buy_dist", "active_span"],
    ("user", "global"): ["first_dist", "last_dist", "last_buy_dist", "active_span"],
    ("brand", "global"): ["active_span", "frequent_user_pct"],
}
GRANULARITIES = ("pair", "user", "brand")
BUCKETED_FAMILIES = ("count", "ratio", "flag")


@dataclass(frozen=True)
class FeatureDescriptor:
    granularity: str
    family: str
    name: str
    bucket: int | str

    @property
    def column(self) -> str:
        if self.bucket == GLOBAL:
            return f"{self.granularity}_{self.name}"
        return f"{self.granularity}_{self.name}_b{self.bucket}"


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[FeatureDescriptor, ...]

    def __len__(self) -> int:
        return len(self.features)

    @property
    def names(self) -> list[str]:
        return [f.column for f in self.features]

    def index(self, column: str) -> int:
        return self.names.index(column)

    def to_text(self) -> str:
        return "".join(
            f"{i}\t{f.granularity}\t{f.family}\t{f.column}\t{f.bucket}\n"
            for i, f in enumerate(self.features)
        )

    @classmethod
    def from_text(cls, text: str) -> "FeatureSchema":
        out = []
        for i, line in enumerate(text.splitlines()):
            idx, gran, fam, column, bucket = line.split("\t")
            if int(idx) != i:
                raise ValueError(f"schema line {i + 1}: index {idx} out of order")
            b = GLOBAL if bucket == GLOBAL else int(bucket)
            prefix = f"{gran}_"
            suffix = "" if b == GLOBAL else f"_b{b}"
            name = column[len(prefix): len(column) - len(suffix)]
            out.append(FeatureDescriptor(gran, fam, name, b))
        return cls(tuple(out))

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


def check_buckets(buckets) -> tuple[int, ...]:
    b = tuple(int(k) for k in buckets)
    if not b or any(k < 1 for k in b) or any(y <= x for x, y in zip(b, b[1:])):
        raise ValueError(f"bucket lengths must be positive and strictly increasing, got {buckets}")
    return b


def build_schema(buckets=DEFAULT_BUCKETS) -> FeatureSchema:
    out = []
    for k in check_buckets(buckets):
        for fam in BUCKETED_FAMILIES:
            for gran in GRANULARITIES:
                out += [FeatureDescriptor(gran, fam, n, k) for n in CATALOG[gran, fam]]
    for gran in GRANULARITIES:
        out += [FeatureDescriptor(gran, "global", n, GLOBAL) for n in CATALOG[gran, "global"]]
    return FeatureSchema(tuple(out))


def _div(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=out, where=den != 0)
    return out


def _consecutive(has_month: np.ndarray) -> np.ndarray:
    return (has_month[:, :-1] & has_month[:, 1:]).any(axis=1).astype(np.float64)


class _Span:
    """Day geometry of one feature end: offsets ``t = day - window_start``."""

    def __init__(self, feature_end: int, window_start: int):
        self.end = feature_end
        self.start = window_start
        self.length = feature_end - window_start
        self.month_of_t = months_of(np.arange(window_start, feature_end)).astype(np.int64)

    def lo(self, k: int) -> int:
        return max(self.length - k, 0)


def _triples(key_hi: np.ndarray, action: np.ndarray, t: np.ndarray, D: int):
    """Unique (key, action, t) with multiplicities, as (key*4+action, t, count)."""
    trip = (key_hi * 4 + action) * D + t
    u, c = np.unique(trip, return_counts=True)
    return u // D, u % D, c


def _first_last(idx: np.ndarray, t: np.ndarray, n: int):
    first = np.full(n, np.iinfo(np.int64).max)
    last = np.full(n, -1)
    np.minimum.at(first, idx, t)
    np.maximum.at(last, idx, t)
    return first, last


def _bucket_counts(ka, tt, tc, n, lo):
    sel = tt >= lo
    counts = np.bincount(ka[sel], weights=tc[sel], minlength=n * 4).reshape(n, 4)
    days = np.bincount(ka[sel], minlength=n * 4).reshape(n, 4).astype(np.float64)
    return counts, days


def _month_presence(ka, tt, n, lo, span: _Span) -> np.ndarray:
    sel = (tt >= lo) & (ka % 4 == _BUY)
    has = np.zeros((n, 4), dtype=bool)
    has[ka[sel] // 4, span.month_of_t[tt[sel]]] = True
    return has


def _count_block(counts, days) -> dict[str, np.ndarray]:
    out = {a: counts[:, i] for i, a in enumerate(_ACT)}
    out["total"] = counts.sum(axis=1)
    out.update({f"days_{a}": days[:, i] for i, a in enumerate(_ACT)})
    return out


def _flag_block(counts, has_month) -> dict[str, np.ndarray]:
    out = {f"has_{a}": (counts[:, i] > 0).astype(np.float64) for i, a in enumerate(_ACT)}
    out["consec_buy"] = _consecutive(has_month)
    return out


def _party_ratios(c: dict, other: str) -> dict[str, np.ndarray]:
    return {
        "conv_buy": _div(c["buy"], c["total"]),
        "conv_buy_days": _div(c["days_buy"], c["total"]),
        "click_per_day": _div(c["click"], c["days_click"]),
        "buy_per_day": _div(c["buy"], c["days_buy"]),
        f"buy_per_{other}": _div(c["buy"], c[f"distinct_{other}s_buy"]),
        f"click_per_{other}": _div(c["click"], c[f"distinct_{other}s_click"]),
    }


def _global_block(first, last, last_buy, span: _Span, present) -> dict[str, np.ndarray]:
    D = span.length
    sentinel = D + 1
    return {
        "first_dist": np.where(present, D - first, sentinel).astype(np.float64),
        "last_dist": np.where(present, D - last, sentinel).astype(np.float64),
        "last_buy_dist": np.where(last_buy >= 0, D - last_buy, sentinel).astype(np.float64),
        "active_span": np.where(present, last - first + 1, 0).astype(np.float64),
    }


def _shard_features(hist: Log, inst_u, inst_b, brands, span: _Span, buckets):
    """Pair/user feature columns for one shard's instances, plus brand partials."""
    D, B = span.length, len(brands)
    n_inst = len(inst_u)
    users = np.unique(hist.user)
    U = len(users)
    t = hist.day.astype(np.int64) - span.start
    a = hist.action.astype(np.int64)
    uid = np.searchsorted(users, hist.user).astype(np.int64)
    bid = np.searchsorted(brands, hist.brand).astype(np.int64)
    pkey = uid * B + bid
    pkeys, pid = np.unique(pkey, return_inverse=True)
    P = len(pkeys)
    pu, pb = pkeys // B, pkeys % B

    # whole-span per-pair and per-user statistics
    p_ka, p_tt, p_tc = _triples(pid, a, t, D)
    u_ka, u_tt, u_tc = _triples(uid, a, t, D)
    pfirst, plast = _first_last(pid, t, P)
    ufirst, ulast = _first_last(uid, t, U)
    p_last_a = np.full(P * 4, -1)
    np.maximum.at(p_last_a, p_ka, p_tt)
    p_last_a = p_last_a.reshape(P, 4)
    u_last_buy = np.full(U, -1)
    buy = a == _BUY
    np.maximum.at(u_last_buy, uid[buy], t[buy])
    p_last_buy = p_last_a[:, _BUY]
    p_buys = np.bincount(pid[buy], minlength=P)

    # instance -> table rows; a missing key maps to the trailing empty row
    i_uid = np.searchsorted(users, inst_u)
    i_uid = np.where((i_uid < U) & (users[np.minimum(i_uid, U - 1)] == inst_u) if U else False, i_uid, U)
    i_bid = np.searchsorted(brands, inst_b)
    b_ok = (i_bid < B) & (brands[np.minimum(i_bid, max(B - 1, 0))] == inst_b) if B else np.zeros(n_inst, bool)
    i_pk = np.where(i_uid < U, i_uid, 0) * B + np.where(b_ok, i_bid, 0)
    i_pid = np.searchsorted(pkeys, i_pk)
    p_ok = (i_uid < U) & b_ok & (i_pid < P)
    p_ok &= pkeys[np.minimum(i_pid, max(P - 1, 0))] == i_pk if P else False
    i_pid = np.where(p_ok, i_pid, P)

    def at_pair(v):
        return np.append(np.asarray(v, np.float64), 0.0)[i_pid]

    def at_user(v):
        return np.append(np.asarray(v, np.float64), 0.0)[i_uid]

    cols: dict[str, np.ndarray] = {}
    for k in buckets:
        lo = span.lo(k)
        pc, pd_ = _bucket_counts(p_ka, p_tt, p_tc, P, lo)
        uc, ud = _bucket_counts(u_ka, u_tt, u_tc, U, lo)

        pair = {n: at_pair(v) for n, v in _count_block(pc, pd_).items()}
        thr = np.maximum(p_last_buy, lo - 1)
        clicks = p_ka % 4 == _CLICK
        valid_sel = clicks & (p_tt > thr[p_ka // 4])
        pair["valid_click"] = at_pair(np.bincount(p_ka[valid_sel] // 4, weights=p_tc[valid_sel], minlength=P))

        user = {n: at_user(v) for n, v in _count_block(uc, ud).items()}
        for i, act in enumerate(_ACT):
            user[f"distinct_brands_{act}"] = at_user(np.bincount(pu, weights=p_last_a[:, i] >= lo, minlength=U))
        user["first_brands"] = at_user(np.bincount(pu, weights=pfirst >= lo, minlength=U))

        for n in CATALOG["pair", "count"]:
            cols[f"pair_{n}_b{k}"] = pair[n]
        for n in CATALOG["user", "count"]:
            cols[f"user_{n}_b{k}"] = user[n]

        ratio = {"conv_buy": _div(pair["buy"], pair["total"]),
                 "conv_buy_days": _div(pair["days_buy"], pair["total"])}
        for act in (*_ACT, "total"):
            ratio[f"share_{act}"] = _div(pair[act], user[act])
        for n in CATALOG["pair", "ratio"]:
            cols[f"pair_{n}_b{k}"] = ratio[n]
        for n, v in _party_ratios(user, "brand").items():
            cols[f"user_{n}_b{k}"] = v

        pflag = _flag_block(pc, _month_presence(p_ka, p_tt, P, lo, span))
        uflag = _flag_block(uc, _month_presence(u_ka, u_tt, U, lo, span))
        for n in CATALOG["pair", "flag"]:
            cols[f"pair_{n}_b{k}"] = at_pair(pflag[n])
            cols[f"user_{n}_b{k}"] = at_user(uflag[n])

    for n, v in _global_block(pfirst, plast, p_last_buy, span, np.ones(P, bool)).items():
        cols[f"pair_{n}"] = np.append(v, D + 1 if n != "active_span" else 0)[i_pid]
    for n, v in _global_block(ufirst, ulast, u_last_buy, span, np.ones(U, bool)).items():
        cols[f"user_{n}"] = np.append(v, D + 1 if n != "active_span" else 0)[i_uid]

    partial = {
        "cnt": np.bincount((bid * 4 + a) * D + t, minlength=B * 4 * D).reshape(B, 4, D),
        "last_a": np.bincount(
            ((np.repeat(pb, 4) * 4 + np.tile(np.arange(4), P)) * D + p_last_a.ravel())[p_last_a.ravel() >= 0],
            minlength=B * 4 * D,
        ).reshape(B, 4, D),
        "first": np.bincount(pb * D + pfirst, minlength=B * D).reshape(B, D),
        "buyers": np.bincount(pb, weights=p_buys >= 1, minlength=B),
        "frequent": np.bincount(pb, weights=p_buys >= 2, minlength=B),
    }
    return cols, partial


def _brand_columns(partial: dict, span: _Span, buckets) -> dict[str, np.ndarray]:
    """Brand feature table (rows = brand vocabulary) from merged histograms."""
    cnt, last_a, first = partial["cnt"], partial["last_a"], partial["first"]
    # suffix sums over days: value at lo = total over t >= lo
    c_suf = np.cumsum(cnt[:, :, ::-1], axis=2)[:, :, ::-1]
    d_suf = np.cumsum((cnt > 0)[:, :, ::-1], axis=2)[:, :, ::-1]
    l_suf = np.cumsum(last_a[:, :, ::-1], axis=2)[:, :, ::-1]
    f_suf = np.cumsum(first[:, ::-1], axis=1)[:, ::-1]
    B, D = first.shape
    buy_days = cnt[:, _BUY, :] > 0
    cols: dict[str, np.ndarray] = {}
    for k in buckets:
        lo = span.lo(k)
        if lo >= D:
            counts = np.zeros((B, 4))
            days = np.zeros((B, 4))
        else:
            counts = c_suf[:, :, lo].astype(np.float64)
            days = d_suf[:, :, lo].astype(np.float64)
        c = _count_block(counts, days)
        for i, act in enumerate(_ACT):
            c[f"distinct_users_{act}"] = l_suf[:, i, lo].astype(np.float64) if lo < D else np.zeros(B)
        c["first_users"] = f_suf[:, lo].astype(np.float64) if lo < D else np.zeros(B)
        for n in CATALOG["brand", "count"]:
            cols[f"brand_{n}_b{k}"] = c[n]
        for n, v in _party_ratios(c, "user").items():
            cols[f"brand_{n}_b{k}"] = v
        has_month = np.zeros((B, 4), dtype=bool)
        bb, tt = np.nonzero(buy_days[:, lo:])
        has_month[bb, span.month_of_t[tt + lo]] = True
        for n, v in _flag_block(counts, has_month).items():
            cols[f"brand_{n}_b{k}"] = v
    active = cnt.sum(axis=1) > 0
    any_day = active.any(axis=1)
    bfirst = np.where(any_day, active.argmax(axis=1), 0)
    blast = np.where(any_day, D - 1 - active[:, ::-1].argmax(axis=1), -1)
    cols["brand_active_span"] = np.where(any_day, blast - bfirst + 1, 0).astype(np.float64)
    cols["brand_frequent_user_pct"] = _div(partial["frequent"], partial["buyers"])
    return cols


def _features_at(log: Log, user, brand, feature_end: int, window_start: int, buckets, shards: int):
    span = _Span(feature_end, window_start)
    hist = log.window(window_start, feature_end)
    brands = np.unique(hist.brand)
    if shards <= 1:
        groups = [np.arange(len(user))]
        hist_parts = [hist]
    else:
        inst_shard = shard_of(user, shards)
        log_shard = shard_of(hist.user, shards)
        groups = [np.flatnonzero(inst_shard == s) for s in range(shards)]
        hist_parts = [hist.take(log_shard == s) for s in range(shards)]

    results = ordered_map(
        lambda s: _shard_features(hist_parts[s], user[groups[s]], brand[groups[s]], brands, span, buckets),
        list(range(len(groups))),
        shards,
    )
    merged = {key: sum(r[1][key] for r in results) for key in results[0][1]}
    brand_cols = _brand_columns(merged, span, buckets)
    b_idx = np.searchsorted(brands, brand)
    b_ok = (b_idx < len(brands)) & (brands[np.minimum(b_idx, max(len(brands) - 1, 0))] == brand) if len(brands) else np.zeros(len(brand), bool)
    b_idx = np.where(b_ok, b_idx, len(brands))
    return groups, [r[0] for r in results], brand_cols, b_idx


def extract(
    instances: InstanceSet,
    log: Log,
    buckets=DEFAULT_BUCKETS,
    window_start: int = 0,
    shards: int = 1,
    dtype=np.float32,
) -> InstanceSet:
    """Attach feature vectors (shared schema) to ``instances``.

    ``log`` holds the visible records; for each instance only records with
    ``window_start <= day < feature_end`` are read.
    """
    buckets = check_buckets(buckets)
    schema = build_schema(buckets)
    names = schema.names
    col_of = {n: j for j, n in enumerate(names)}
    X = np.zeros((len(instances), len(names)), dtype=dtype)
    for fe in np.unique(instances.feature_end).tolist():
        if fe <= window_start:
            raise ValueError(f"feature end {fe} must be after window start {window_start}")
        rows = np.flatnonzero(instances.feature_end == fe)
        groups, shard_cols, brand_cols, b_idx = _features_at(
            log, instances.user[rows], instances.brand[rows], fe, window_start, buckets, shards
        )
        for g, cols in zip(groups, shard_cols):
            target = rows[g]
            for name, values in cols.items():
                X[target, col_of[name]] = values
        for name, table in brand_cols.items():
            pad = 0.0
            X[rows, col_of[name]] = np.append(table, pad)[b_idx]
        filled = set(brand_cols) | set(shard_cols[0])
        assert filled == set(names), f"schema mismatch: {sorted(set(names) ^ filled)[:5]}"
    out = InstanceSet(
        instances.user, instances.brand, instances.feature_end,
        instances.label, instances.buy_count, X, schema,
    )
    return out
