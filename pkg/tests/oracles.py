"""Slow, obviously-correct reference computations used by the tests.

Nothing here imports the code paths it checks beyond plain data types.
"""
from __future__ import annotations

from fractions import Fraction

ACTS = ("click", "buy", "collect", "cart")
# inclusive month day ranges, written out by hand
MONTHS = ((0, 31), (32, 66), (67, 94), (95, 122))


def month(day):
    for i, (lo, hi) in enumerate(MONTHS):
        if lo <= day <= hi:
            return i
    raise ValueError(day)


def div(a, b):
    return a / b if b else 0.0


def _counts(recs):
    out = {}
    for i, a in enumerate(ACTS):
        out[a] = sum(1 for r in recs if r[2] == i)
        out[f"days_{a}"] = len({r[3] for r in recs if r[2] == i})
    out["total"] = len(recs)
    return out


def _consec(recs):
    ms = {month(r[3]) for r in recs if r[2] == 1}
    return float(any(m in ms and m + 1 in ms for m in range(3)))


def _flags(recs):
    out = {f"has_{a}": float(any(r[2] == i for r in recs)) for i, a in enumerate(ACTS)}
    out["consec_buy"] = _consec(recs)
    return out


def feature_vector(records, user, brand, feature_end, window_start, buckets):
    """Column name -> value for one instance, by direct enumeration."""
    hist = [r for r in records if window_start <= r[3] < feature_end]
    first_day = {}
    for r in hist:
        key = (r[0], r[1])
        first_day[key] = min(first_day.get(key, 10**9), r[3])
    out = {}
    for k in buckets:
        lo = max(feature_end - k, window_start)
        bucket = [r for r in hist if r[3] >= lo]
        P = [r for r in bucket if r[0] == user and r[1] == brand]
        U = [r for r in bucket if r[0] == user]
        Bd = [r for r in bucket if r[1] == brand]

        pc = _counts(P)
        buys = [r[3] for r in P if r[2] == 1]
        last_buy = max(buys) if buys else None
        pc["valid_click"] = sum(1 for r in P if r[2] == 0 and (last_buy is None or r[3] > last_buy))
        uc = _counts(U)
        for i, a in enumerate(ACTS):
            uc[f"distinct_brands_{a}"] = len({r[1] for r in U if r[2] == i})
        uc["first_brands"] = sum(1 for (uu, bb), d in first_day.items() if uu == user and d >= lo)
        bc = _counts(Bd)
        for i, a in enumerate(ACTS):
            bc[f"distinct_users_{a}"] = len({r[0] for r in Bd if r[2] == i})
        bc["first_users"] = sum(1 for (uu, bb), d in first_day.items() if bb == brand and d >= lo)

        for g, c in (("pair", pc), ("user", uc), ("brand", bc)):
            for n, v in c.items():
                out[f"{g}_{n}_b{k}"] = float(v)

        out[f"pair_conv_buy_b{k}"] = div(pc["buy"], pc["total"])
        out[f"pair_conv_buy_days_b{k}"] = div(pc["days_buy"], pc["total"])
        for a in (*ACTS, "total"):
            out[f"pair_share_{a}_b{k}"] = div(pc[a], uc[a])
        for g, c, other in (("user", uc, "brand"), ("brand", bc, "user")):
            out[f"{g}_conv_buy_b{k}"] = div(c["buy"], c["total"])
            out[f"{g}_conv_buy_days_b{k}"] = div(c["days_buy"], c["total"])
            out[f"{g}_click_per_day_b{k}"] = div(c["click"], c["days_click"])
            out[f"{g}_buy_per_day_b{k}"] = div(c["buy"], c["days_buy"])
            out[f"{g}_buy_per_{other}_b{k}"] = div(c["buy"], c[f"distinct_{other}s_buy"])
            out[f"{g}_click_per_{other}_b{k}"] = div(c["click"], c[f"distinct_{other}s_click"])
        for g, recs in (("pair", P), ("user", U), ("brand", Bd)):
            for n, v in _flags(recs).items():
                out[f"{g}_{n}_b{k}"] = v

    sentinel = feature_end - window_start + 1
    for g, recs in (
        ("pair", [r for r in hist if r[0] == user and r[1] == brand]),
        ("user", [r for r in hist if r[0] == user]),
    ):
        days = [r[3] for r in recs]
        buys = [r[3] for r in recs if r[2] == 1]
        out[f"{g}_first_dist"] = float(feature_end - min(days)) if days else float(sentinel)
        out[f"{g}_last_dist"] = float(feature_end - max(days)) if days else float(sentinel)
        out[f"{g}_last_buy_dist"] = float(feature_end - max(buys)) if buys else float(sentinel)
        out[f"{g}_active_span"] = float(max(days) - min(days) + 1) if days else 0.0
    bdays = [r[3] for r in hist if r[1] == brand]
    out["brand_active_span"] = float(max(bdays) - min(bdays) + 1) if bdays else 0.0
    per_user = {}
    for r in hist:
        if r[1] == brand and r[2] == 1:
            per_user[r[0]] = per_user.get(r[0], 0) + 1
    out["brand_frequent_user_pct"] = div(sum(1 for c in per_user.values() if c > 1), len(per_user))
    return out


def brute_force_prf(pred, answer):
    """Exact (precision, recall, f1) as Fractions via nested loops."""
    hits = 0
    for u, brands in pred.items():
        for b in brands:
            for v, answer_brands in answer.items():
                if v == u and b in answer_brands:
                    hits += 1
    n_pred = sum(len(b) for b in pred.values())
    n_ans = sum(len(b) for b in answer.values())
    p = Fraction(hits, n_pred) if n_pred else Fraction(0)
    r = Fraction(hits, n_ans) if n_ans else Fraction(0)
    f = 2 * p * r / (p + r) if p + r else Fraction(0)
    return p, r, f
