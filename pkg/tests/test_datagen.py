from dataclasses import replace

import numpy as np
import pytest

from tmpp.datagen import (
    STATS_ROWS, GenConfig, calibrate_buy_bias, click_buy_ratio, dataset_stats,
    generate, generate_with_truth,
)
from tmpp.log_model import ActionType, Log, N_DAYS, save_log


def test_invalid_config():
    with pytest.raises(ValueError, match="invalid GenConfig"):
        GenConfig(n_users=0)
    with pytest.raises(ValueError):
        GenConfig(crawler_fraction=1.5)


def test_same_seed_byte_identical(tmp_path):
    cfg = GenConfig(n_users=600, n_brands=30, seed=7)
    save_log(tmp_path / "a.tsv", generate(cfg))
    save_log(tmp_path / "b.tsv", generate(cfg))
    assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()
    assert generate(replace(cfg, seed=8)) != generate(cfg)


def test_worker_count_independent():
    cfg = GenConfig(n_users=2500, n_brands=40, seed=3)
    assert generate(cfg, workers=1) == generate(cfg, workers=3)


def test_records_in_window_and_canonical():
    log = generate(GenConfig(n_users=300, n_brands=20, seed=1))
    assert log.day.min() >= 0 and log.day.max() < N_DAYS
    assert log == log.sorted()


def test_planted_crawlers():
    log, crawlers = generate_with_truth(GenConfig(n_users=1000, crawler_fraction=0.05, seed=11))
    assert 30 <= len(crawlers) <= 70
    is_c = np.isin(log.user, crawlers)
    heavy = []
    for u in np.unique(log.user):
        m = log.user == u
        clicks = np.sum(log.action[m] == ActionType.CLICK)
        buys = np.sum(log.action[m] == ActionType.BUY)
        if clicks > 500 and buys == 0:
            heavy.append(u)
    assert heavy == crawlers.tolist()
    assert not np.any(log.action[is_c] != ActionType.CLICK)


def test_click_buy_ratio_default_near_target():
    ratio = click_buy_ratio(generate(GenConfig(n_users=10_000, seed=5)))
    assert 39 * 0.7 <= ratio <= 39 * 1.3


def test_click_buy_ratio_calibration():
    cfg = calibrate_buy_bias(GenConfig(n_users=10_000, seed=2), target_ratio=20.0)
    ratio = click_buy_ratio(generate(cfg))
    assert 20 * 0.7 <= ratio <= 20 * 1.3


def test_stats_empty():
    rep = dataset_stats(Log.empty())
    assert all(v == (0, 0, 0, 0, 0) for v in rep.values.values())


def test_stats_toy_hand_count():
    # (user, brand, action, day): two April rows for one pair, one July row
    log = Log.from_arrays([1, 1, 2], [5, 5, 6], [0, 1, 3], [3, 20, 100])
    rep = dataset_stats(log)
    assert rep.row("(User ID, Brand ID)") == (1, 0, 0, 1, 2)
    assert rep.row("User ID") == (1, 0, 0, 1, 2)
    assert rep.row("Brand ID") == (1, 0, 0, 1, 2)
    assert rep.row("Action Click") == (1, 0, 0, 0, 1)
    assert rep.row("Action Buy") == (1, 0, 0, 0, 1)
    assert rep.row("Action Cart") == (0, 0, 0, 1, 1)
    assert rep.row("Action Total") == (2, 0, 0, 1, 3)


def test_stats_matches_recount(rng):
    from conftest import random_log
    from oracles import month

    log = random_log(rng, 400, n_users=20, n_brands=8, day_hi=123)
    rep = dataset_stats(log)
    rows = list(zip(log.user.tolist(), log.brand.tolist(), log.action.tolist(), log.day.tolist()))
    for col in range(5):
        sel = [r for r in rows if col == 4 or month(r[3]) == col]
        assert rep.row("(User ID, Brand ID)")[col] == len({(r[0], r[1]) for r in sel})
        assert rep.row("User ID")[col] == len({r[0] for r in sel})
        assert rep.row("Brand ID")[col] == len({r[1] for r in sel})
        for label, code in (("Action Click", 0), ("Action Buy", 1), ("Action Collect", 2), ("Action Cart", 3)):
            assert rep.row(label)[col] == sum(1 for r in sel if r[2] == code)
        assert rep.row("Action Total")[col] == len(sel)


def test_stats_layout():
    text = dataset_stats(Log.empty()).to_text()
    for label in STATS_ROWS:
        assert label in text
    csv = dataset_stats(Log.empty()).to_csv().splitlines()
    assert csv[0] == "row,April,May,June,July,Date Total"
    assert len(csv) == 1 + len(STATS_ROWS)


@pytest.mark.parametrize("field, value", [
    ("satiation", 1.5), ("satiation_days", -1), ("browse_rate", -0.1), ("crawler_daily_clicks", -2),
])
def test_invalid_behavior_knobs(field, value):
    with pytest.raises(ValueError, match=field):
        GenConfig(**{field: value})


def test_browse_noise_adds_clicks():
    quiet = generate(GenConfig(n_users=800, n_brands=30, seed=4, browse_rate=0.0, crawler_fraction=0.0))
    noisy = generate(GenConfig(n_users=800, n_brands=30, seed=4, browse_rate=0.5, crawler_fraction=0.0))
    n_click = lambda log: int(np.sum(log.action == ActionType.CLICK))
    assert n_click(noisy) > n_click(quiet)
