"""Seeded synthetic behavior logs with a planted purchase process.

Each normal user follows a handful of brands.  Every (user, brand) pair has
a latent affinity and an on/off interest state; clicks arrive while the
pair is interested, collect and cart events ride on click days, and a buy
on day ``d`` happens with probability

    sigmoid(buy_bias + affinity_weight * affinity
            + click_weight * log1p(decayed_clicks)
            + log(cart_boost) * recent_cart + log(collect_boost) * recent_collect)

so purchases depend on recent history the way the feature catalog can see.
Crawler users click many brands every day and never buy.

Users are simulated in fixed-size blocks, each with its own random
substream, so the output is identical for any worker count.
"""
from __future__ import annotations

import io
import math
from dataclasses import asdict, dataclass

import numpy as np

from .log_model import N_DAYS, ActionType, Log, Month, months_of
from .sharding import ordered_map, substream

BLOCK_USERS = 1024
_CRAWLER_CLICK_FLOOR = 501


@dataclass(frozen=True)
class GenConfig:
    n_users: int = 10_000
    n_brands: int = 200
    seed: int = 0
    crawler_fraction: float = 0.05
    # expected clicks per interested pair-day
    base_click_rate: float = 1.6
    # std-dev of the latent pair affinity
    conversion_affinity: float = 0.15
    # odds multipliers for a cart / collect in the last `flag_memory` days
    cart_boost: float = 20.0
    collect_boost: float = 4.0
    days: int = N_DAYS
    brands_per_user: float = 5.0
    buy_bias: float = -9.0
    affinity_weight: float = 1.0
    click_weight: float = 3.0
    click_decay: float = 0.8
    flag_memory: int = 5
    # daily probability that an idle pair becomes interested (at affinity 0)
    interest_rate: float = 0.01
    interest_stop: float = 0.1
    collect_prob: float = 0.06
    cart_prob: float = 0.03
    brand_skew: float = 1.0
    # how strongly affinity raises the chance of a new interest episode
    affinity_interest: float = 0.5
    # after a purchase the episode start rate is multiplied by `satiation`
    # for `satiation_days` days
    satiation: float = 0.2
    satiation_days: int = 30
    # daily one-off clicks per normal user on random brands outside the
    # follow list; these never convert
    browse_rate: float = 0.02
    # mean clicks per crawler per day (every crawler ends above 500 clicks)
    crawler_daily_clicks: float = 5.5

    def __post_init__(self):
        problems = []
        if self.n_users < 1:
            problems.append("n_users must be >= 1")
        if self.n_brands < 1:
            problems.append("n_brands must be >= 1")
        if not 0.0 <= self.crawler_fraction <= 1.0:
            problems.append("crawler_fraction must be in [0, 1]")
        if not 1 <= self.days <= N_DAYS:
            problems.append(f"days must be in [1, {N_DAYS}]")
        for name in ("base_click_rate", "conversion_affinity", "brands_per_user", "brand_skew",
                     "browse_rate", "crawler_daily_clicks"):
            if not getattr(self, name) >= 0:
                problems.append(f"{name} must be >= 0")
        for name in ("cart_boost", "collect_boost"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be > 0")
        for name in ("click_decay", "interest_rate", "interest_stop", "collect_prob", "cart_prob", "satiation"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                problems.append(f"{name} must be a probability")
        if self.flag_memory < 0:
            problems.append("flag_memory must be >= 0")
        if self.satiation_days < 0:
            problems.append("satiation_days must be >= 0")
        if problems:
            raise ValueError("invalid GenConfig: " + "; ".join(problems))

    def to_dict(self) -> dict:
        return asdict(self)


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _brand_weights(cfg: GenConfig) -> np.ndarray:
    w = 1.0 / np.arange(1, cfg.n_brands + 1) ** cfg.brand_skew
    return w / w.sum()


def _simulate_block(cfg: GenConfig, block: int):
    lo = block * BLOCK_USERS
    hi = min(cfg.n_users, lo + BLOCK_USERS)
    users = np.arange(lo, hi, dtype=np.int64) + 1
    rng = substream(cfg.seed, "block", block)

    is_crawler = rng.random(len(users)) < cfg.crawler_fraction
    normal = users[~is_crawler]
    crawlers = users[is_crawler]

    # follow lists: distinct brands per normal user, popularity-weighted
    n_follow = np.minimum(1 + rng.poisson(max(cfg.brands_per_user - 1.0, 0.0), len(normal)), cfg.n_brands)
    weights = _brand_weights(cfg)
    pair_user = np.repeat(normal, n_follow)
    pair_brand = np.concatenate(
        [rng.choice(cfg.n_brands, size=k, replace=False, p=weights) for k in n_follow.tolist()]
    ).astype(np.int64) + 1 if len(normal) else np.empty(0, np.int64)
    n_pairs = len(pair_user)

    affinity = rng.normal(0.0, cfg.conversion_affinity, n_pairs)
    interested = np.zeros(n_pairs, dtype=bool)
    decayed = np.zeros(n_pairs)
    last_cart = np.full(n_pairs, -10**6)
    last_collect = np.full(n_pairs, -10**6)
    p_on = np.clip(cfg.interest_rate * np.exp(cfg.affinity_interest * affinity), 0.0, 1.0)
    last_buy = np.full(n_pairs, -10**6)
    click_rate = cfg.base_click_rate * np.exp(0.25 * affinity)
    log_cart = math.log(cfg.cart_boost)
    log_collect = math.log(cfg.collect_boost)

    out_idx, out_action, out_day, out_rep = [], [], [], []
    for d in range(cfg.days):
        sated = d - last_buy <= cfg.satiation_days
        interested |= rng.random(n_pairs) < np.where(sated, p_on * cfg.satiation, p_on)
        clicks = np.where(interested, rng.poisson(click_rate), 0)
        clicked = clicks > 0
        coll = clicked & (rng.random(n_pairs) < cfg.collect_prob)
        cart = clicked & (rng.random(n_pairs) < cfg.cart_prob)
        last_collect[coll] = d
        last_cart[cart] = d
        decayed = cfg.click_decay * decayed + clicks
        logit = (
            cfg.buy_bias
            + cfg.affinity_weight * affinity
            + cfg.click_weight * np.log1p(decayed)
            + log_cart * (d - last_cart <= cfg.flag_memory)
            + log_collect * (d - last_collect <= cfg.flag_memory)
        )
        buy = interested & (rng.random(n_pairs) < _sigmoid(logit))
        n_buy = np.where(buy, 1 + (rng.random(n_pairs) < 0.1), 0)

        for action, counts in (
            (ActionType.CLICK, clicks),
            (ActionType.COLLECT, coll.astype(np.int64)),
            (ActionType.CART, cart.astype(np.int64)),
            (ActionType.BUY, n_buy),
        ):
            idx = np.flatnonzero(counts)
            if len(idx):
                out_idx.append(idx)
                out_rep.append(counts[idx])
                out_action.append(np.full(len(idx), int(action), np.int8))
                out_day.append(np.full(len(idx), d, np.int16))

        # a purchase satisfies the current interest
        last_buy[buy] = d
        decayed[buy] = 0.0
        last_cart[buy] = -10**6
        last_collect[buy] = -10**6
        interested &= ~(buy | (rng.random(n_pairs) < cfg.interest_stop))

    if out_idx:
        idx = np.concatenate(out_idx)
        rep = np.concatenate(out_rep)
        normal_log = Log.from_arrays(
            np.repeat(pair_user[idx], rep),
            np.repeat(pair_brand[idx], rep),
            np.repeat(np.concatenate(out_action), rep),
            np.repeat(np.concatenate(out_day), rep),
        )
    else:
        normal_log = Log.empty()

    # one-off browsing: popularity-weighted brands, clicks only
    n_browse = rng.poisson(cfg.browse_rate, size=(len(normal), cfg.days))
    b_total = int(n_browse.sum())
    browse_log = Log.from_arrays(
        np.repeat(np.repeat(normal, cfg.days), n_browse.ravel()),
        rng.choice(cfg.n_brands, size=b_total, p=weights).astype(np.int64) + 1,
        np.zeros(b_total, np.int8),
        np.repeat(np.tile(np.arange(cfg.days), len(normal)), n_browse.ravel()),
    )
    normal_log = _cap_silent_clickers(normal_log.concat(browse_log))

    # crawlers: heavy daily clicking over random brands, never buying
    per_day = rng.poisson(cfg.crawler_daily_clicks, size=(len(crawlers), cfg.days))
    short = np.maximum(_CRAWLER_CLICK_FLOOR - per_day.sum(axis=1), 0)
    # top up any crawler below the floor on its last day
    per_day[:, -1] += short
    total = per_day.sum(axis=1)
    c_user = np.repeat(crawlers, total)
    c_day = np.repeat(np.tile(np.arange(cfg.days), len(crawlers)), per_day.ravel())
    c_brand = rng.integers(1, cfg.n_brands + 1, size=len(c_user))
    crawler_log = Log.from_arrays(c_user, c_brand, np.zeros(len(c_user)), c_day)
    return normal_log.concat(crawler_log), crawlers


def _cap_silent_clickers(log: Log, limit: int = 500) -> Log:
    """Truncate clicks of non-buying normal users to ``limit``.

    Keeps the planted crawlers the only users the cleansing rule can hit.
    """
    if len(log) == 0:
        return log
    uid, inv = np.unique(log.user, return_inverse=True)
    clicks = np.bincount(inv, weights=log.action == ActionType.CLICK, minlength=len(uid))
    buys = np.bincount(inv, weights=log.action == ActionType.BUY, minlength=len(uid))
    heavy = (clicks > limit) & (buys == 0)
    if not heavy.any():
        return log
    keep = np.ones(len(log), dtype=bool)
    for u in np.flatnonzero(heavy):
        rows = np.flatnonzero((inv == u) & (log.action == ActionType.CLICK))
        keep[rows[limit:]] = False
    return log.take(keep)


def generate_with_truth(config: GenConfig, workers: int = 1) -> tuple[Log, np.ndarray]:
    """Generate a log and return it with the sorted planted crawler ids."""
    n_blocks = -(-config.n_users // BLOCK_USERS)
    parts = ordered_map(lambda b: _simulate_block(config, b), range(n_blocks), workers)
    log = Log.empty()
    logs = [p[0] for p in parts]
    if logs:
        log = Log.from_arrays(
            np.concatenate([x.user for x in logs]),
            np.concatenate([x.brand for x in logs]),
            np.concatenate([x.action for x in logs]),
            np.concatenate([x.day for x in logs]),
        )
    crawlers = np.sort(np.concatenate([p[1] for p in parts])) if parts else np.empty(0, np.int64)
    return log.sorted(), crawlers


def generate(config: GenConfig, workers: int = 1) -> Log:
    return generate_with_truth(config, workers)[0]


def click_buy_ratio(log: Log) -> float:
    buys = int(np.count_nonzero(log.action == ActionType.BUY))
    clicks = int(np.count_nonzero(log.action == ActionType.CLICK))
    return clicks / buys if buys else math.inf


def calibrate_buy_bias(
    config: GenConfig, target_ratio: float = 39.0, pilot_users: int = 3000, iters: int = 14
) -> GenConfig:
    """Return ``config`` with ``buy_bias`` set so clicks:buys is near ``target_ratio``.

    Bisection on a pilot population sharing ``config.seed``; the ratio is
    monotone in the bias up to pilot noise.
    """
    from dataclasses import replace

    pilot = replace(config, n_users=min(pilot_users, config.n_users))
    lo, hi = -15.0, 2.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        ratio = click_buy_ratio(generate(replace(pilot, buy_bias=mid)))
        if ratio > target_ratio:
            lo = mid
        else:
            hi = mid
    return replace(config, buy_bias=round(0.5 * (lo + hi), 4))


# --- per-month dataset statistics -------------------------------------------------

STATS_ROWS = (
    "(User ID, Brand ID)",
    "User ID",
    "Brand ID",
    "Action Click",
    "Action Buy",
    "Action Collect",
    "Action Cart",
    "Action Total",
)
STATS_COLUMNS = tuple(m.label for m in Month) + ("Date Total",)


@dataclass(frozen=True)
class StatsReport:
    """Counts laid out as rows x (four months + overall)."""

    values: dict[str, tuple[int, ...]]

    def row(self, label: str) -> tuple[int, ...]:
        return self.values[label]

    def to_text(self) -> str:
        width = max(12, *(len(f"{v:,}") + 2 for r in self.values.values() for v in r))
        head = f"{'':<20}" + "".join(f"{c:>{width}}" for c in STATS_COLUMNS)
        lines = [head]
        for label in STATS_ROWS:
            lines.append(f"{label:<20}" + "".join(f"{v:>{width},}" for v in self.values[label]))
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("row," + ",".join(STATS_COLUMNS) + "\n")
        for label in STATS_ROWS:
            buf.write(f'"{label}",' + ",".join(str(v) for v in self.values[label]) + "\n")
        return buf.getvalue()


def _distinct(*cols) -> int:
    if len(cols[0]) == 0:
        return 0
    return len(np.unique(np.stack(cols, axis=1), axis=0)) if len(cols) > 1 else len(np.unique(cols[0]))


def dataset_stats(log: Log) -> StatsReport:
    month = months_of(log.day) if len(log) else np.empty(0, np.int8)
    masks = [month == m for m in Month] + [np.ones(len(log), dtype=bool)]
    values = {label: [] for label in STATS_ROWS}
    for mask in masks:
        u, b, a = log.user[mask], log.brand[mask], log.action[mask]
        values["(User ID, Brand ID)"].append(_distinct(u, b))
        values["User ID"].append(_distinct(u))
        values["Brand ID"].append(_distinct(b))
        counts = np.bincount(a, minlength=4) if len(a) else np.zeros(4, np.int64)
        values["Action Click"].append(int(counts[ActionType.CLICK]))
        values["Action Buy"].append(int(counts[ActionType.BUY]))
        values["Action Collect"].append(int(counts[ActionType.COLLECT]))
        values["Action Cart"].append(int(counts[ActionType.CART]))
        values["Action Total"].append(int(mask.sum()))
    return StatsReport({k: tuple(v) for k, v in values.items()})
