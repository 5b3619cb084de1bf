import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_log
from oracles import feature_vector
from tmpp.features import DEFAULT_BUCKETS, FeatureSchema, build_schema, extract
from tmpp.instances import InstanceSet, TimeSpanConfig, build_prediction_set, build_training_set
from tmpp.log_model import ActionType, Log

B, C, K, T = ActionType.BUY, ActionType.CLICK, ActionType.COLLECT, ActionType.CART


def one(user, brand, end):
    return InstanceSet(np.array([user]), np.array([brand]), np.array([end]))


def values(log, inst, buckets=(1000,), start=0):
    out = extract(inst, log, buckets, window_start=start)
    return [dict(zip(out.schema.names, row.tolist())) for row in out.X]


def test_pair_counting_hand_trace():
    log = Log.from_arrays([1] * 4, [5] * 4, [C, C, B, C], [2, 3, 3, 4])
    v = values(log, one(1, 5, 10))[0]
    assert v["pair_click_b1000"] == 3
    assert v["pair_buy_b1000"] == 1
    assert v["pair_valid_click_b1000"] == 1
    assert v["pair_days_click_b1000"] == 3


def test_empty_history_zero_counts():
    log = Log.from_arrays([2], [6], [C], [1])
    v = values(log, one(1, 5, 10))[0]
    assert all(v[n] == 0 for n in v if "_b1000" in n)
    assert v["pair_last_buy_dist"] == 11


def test_brand_distinct_users():
    log = Log.from_arrays([7, 7, 9], [5, 5, 5], [C, C, C], [1, 2, 3])
    v = values(log, one(7, 5, 10))[0]
    assert v["brand_distinct_users_click_b1000"] == 2


def test_ratios():
    log = Log.from_arrays([1] * 10 + [1] * 6, [5] * 10 + [6] * 6, [B, B] + [C] * 8 + [C] * 6, list(range(10)) + list(range(6)))
    v = values(log, one(1, 5, 20))[0]
    assert v["pair_conv_buy_b1000"] == pytest.approx(0.2)
    # user clicks 14, pair clicks 8
    assert v["pair_share_click_b1000"] == pytest.approx(8 / 14)
    assert v["pair_share_collect_b1000"] == 0


def test_cross_ratio_example():
    log = Log.from_arrays([1] * 10, [5] * 4 + [6] * 6, [C] * 10, list(range(10)))
    v = values(log, one(1, 5, 20))[0]
    assert v["pair_share_click_b1000"] == pytest.approx(0.4)


def test_flags():
    log = Log.from_arrays([1, 1, 1], [5, 5, 5], [T, B, B], [5, 10, 40])
    v = values(log, one(1, 5, 95))[0]
    assert v["pair_has_cart_b1000"] == 1 and v["pair_has_collect_b1000"] == 0
    assert v["pair_consec_buy_b1000"] == 1  # April and May
    log2 = Log.from_arrays([1, 1], [5, 5], [B, B], [10, 70])  # April and June
    assert values(log2, one(1, 5, 95))[0]["pair_consec_buy_b1000"] == 0


def test_globals():
    log = Log.from_arrays([1], [5], [C], [9])
    v = values(log, one(1, 5, 10))[0]
    assert (v["pair_first_dist"], v["pair_last_dist"], v["pair_active_span"]) == (1, 1, 1)
    assert v["pair_last_buy_dist"] == 11
    log2 = Log.from_arrays([1, 1, 2, 3], [5, 5, 5, 5], [B, B, B, C], [1, 2, 3, 4])
    assert values(log2, one(1, 5, 10))[0]["brand_frequent_user_pct"] == 0.5


def test_schema_structure():
    schema = build_schema((7, 30))
    names = schema.names
    assert len(set(names)) == len(names)
    per_bucket = [d for d in schema.features if d.bucket == 7]
    assert len(per_bucket) == len([d for d in schema.features if d.bucket == 30])
    assert FeatureSchema.from_text(schema.to_text()) == schema
    assert build_schema().to_text() == build_schema(DEFAULT_BUCKETS).to_text()
    with pytest.raises(ValueError):
        build_schema((30, 7))


def test_same_user_same_user_slice(rng):
    log = random_log(rng, 300)
    inst = InstanceSet(np.array([1, 1]), np.array([10, 20]), np.array([67, 67]))
    out = extract(inst, log, (3, 30, 1000))
    user_cols = [i for i, d in enumerate(out.schema.features) if d.granularity == "user"]
    assert np.array_equal(out.X[0, user_cols], out.X[1, user_cols])


def _check_oracle(log, inst, buckets, start=0):
    out = extract(inst, log, buckets, window_start=start)
    recs = list(zip(log.user.tolist(), log.brand.tolist(), log.action.tolist(), log.day.tolist()))
    for i in range(len(inst)):
        ref = feature_vector(recs, int(inst.user[i]), int(inst.brand[i]), int(inst.feature_end[i]), start, buckets)
        got = dict(zip(out.schema.names, out.X[i].tolist()))
        assert set(ref) == set(got)
        bad = {n: (got[n], ref[n]) for n in ref if got[n] != np.float32(ref[n])}
        assert not bad, bad


def test_full_vector_oracle_default_buckets(rng):
    log = random_log(rng, 900, n_users=8, n_brands=6)
    inst = build_training_set(log, TimeSpanConfig.sliding_for(95), window=(0, 95))
    _check_oracle(log, inst, DEFAULT_BUCKETS)


def test_oracle_unknown_pairs_and_window_start(rng):
    log = random_log(rng, 400)
    inst = InstanceSet(np.array([1, 99, 2]), np.array([10, 10, 999]), np.array([60, 60, 80]))
    _check_oracle(log, inst, (2, 9, 40), start=20)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 800), st.booleans())
def test_oracle_property(seed, n, many_buys):
    rng = np.random.default_rng(seed)
    log = random_log(rng, n, n_users=5, n_brands=4, buy_p=0.4 if many_buys else 0.1)
    inst = build_prediction_set(log, window=(0, 95))
    _check_oracle(log, inst, (1, 7, 30, 1000))


def test_sharded_extract_identical(rng):
    log = random_log(rng, 3000, n_users=60, n_brands=9)
    inst = build_training_set(log, TimeSpanConfig.sliding_for(95), window=(0, 95))
    a = extract(inst, log, shards=1)
    for s in (2, 8):
        assert np.array_equal(a.X, extract(inst, log, shards=s).X)
