import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from conftest import random_log
from oracles import brute_force_prf
from tmpp.ensemble import (
    ROLE_BLEND, ROLE_TRAIN, ROLE_TUNE, BlendModel, DecisionGrid, EnsembleModel, ModelGroup,
    PredictionSet, assign_roles, blend_fit, check_groups, default_groups, ensemble_predict,
    score_matrix, select_pairs, simplex_grid, tune_decision, tune_ensemble,
)
from tmpp.features import extract
from tmpp.instances import TimeSpanConfig, build_training_set
from tmpp.models import GlobalScorer, LogisticRegression, LrConfig, REGISTRY, global_score
from tmpp.sharding import user_hash


def test_default_groups_by_scheme():
    groups = default_groups([s.name for s in REGISTRY])
    assert {g.name: g.members for g in groups} == {
        "fixed": ("lr_fixed", "gbrt_fixed", "rf_fixed"),
        "sliding": ("gbrt_sliding", "rf_sliding"),
        "global": ("global",),
    }
    check_groups(groups, [s.name for s in REGISTRY])
    with pytest.raises(ValueError, match="partition"):
        check_groups(groups[:2], [s.name for s in REGISTRY])
    with pytest.raises(ValueError, match="empty"):
        ModelGroup("x", ())


@pytest.fixture(scope="module")
def scored():
    rng = np.random.default_rng(4)
    log = random_log(rng, 2000, n_users=40, n_brands=6)
    inst = extract(build_training_set(log, TimeSpanConfig.fixed_for(95), window=(0, 95)), log, (7, 1000))
    lr = LogisticRegression(LrConfig(epochs=20)).fit(inst)
    return log, inst, [lr, GlobalScorer()]


def test_score_matrix_columns_and_shards(scored):
    log, inst, models = scored
    M = score_matrix(models, inst, log)
    assert M.shape == (len(inst), 2)
    assert np.array_equal(M[:, 0], models[0].score(inst))
    assert np.array_equal(score_matrix(models, inst, log, shards=8), M)
    i = 3
    row = score_matrix(models, inst.take([i]), log)
    hist = log.take((log.user == inst.user[i]) & (log.brand == inst.brand[i]) & (log.day < inst.feature_end[i]))
    assert row[0, 1] == pytest.approx(global_score(hist))
    assert row[0, 0] == M[i, 0]


def test_score_matrix_schema_mismatch(scored):
    log, inst, models = scored
    other = extract(inst, log, (3, 1000))
    with pytest.raises(ValueError, match="schema"):
        score_matrix(models, other, log)


def _reference_blend(M, y, l2):
    mu, sd = M.mean(0), M.std(0)
    Z = (M - mu) / sd

    def f(t):
        z = Z @ t[:-1] + t[-1]
        return np.mean(np.logaddexp(0, z) - y * z) + 0.5 * l2 * t[:-1] @ t[:-1]

    res = minimize(f, np.zeros(M.shape[1] + 1), method="BFGS", options={"gtol": 1e-11})
    w = res.x[:-1] / sd
    return w, res.x[-1] - w @ mu


def test_blend_matches_reference_solver():
    M = np.array([[0.1, 3.0], [0.4, 1.0], [0.35, 2.5], [0.8, 0.5], [0.6, 2.0], [0.2, 0.1], [0.9, 1.5], [0.5, 0.7]])
    y = np.array([0, 0, 1, 1, 1, 0, 1, 0])
    blend = blend_fit(M, y, [ModelGroup("g", ("a", "b"))], ["a", "b"], l2=0.01)[0]
    w, b = _reference_blend(M, y, 0.01)
    assert np.allclose(blend.weights, w, atol=1e-4)
    assert blend.bias == pytest.approx(b, abs=1e-4)


def test_blend_single_member_monotone():
    rng = np.random.default_rng(1)
    s = rng.normal(size=200)
    y = (s + rng.normal(size=200) > 0).astype(int)
    blend = blend_fit(s[:, None], y, [ModelGroup("g", ("m",))], ["m"])[0]
    out = blend.predict(s[:, None], ["m"])
    order = np.argsort(s)
    assert np.all(np.diff(out[order]) >= 0)


def _log_loss(p, y):
    p = np.clip(p, 1e-15, 1 - 1e-15)
    return -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))


def test_noise_column_cannot_hurt_in_sample():
    rng = np.random.default_rng(2)
    s = rng.normal(size=(300, 1))
    y = (s[:, 0] + rng.normal(size=300) > 0.3).astype(int)
    M = np.hstack([s, rng.normal(size=(300, 1))])
    one = blend_fit(M, y, [ModelGroup("g", ("a",))], ["a", "n"])[0]
    two = blend_fit(M, y, [ModelGroup("g", ("a", "n"))], ["a", "n"])[0]
    assert _log_loss(two.predict(M, ["a", "n"]), y) <= _log_loss(one.predict(M, ["a", "n"]), y) + 1e-9


def test_blend_degenerate_labels_name_group():
    with pytest.raises(ValueError, match="'sliding'"):
        blend_fit(np.ones((4, 1)), [1, 1, 1, 1], [ModelGroup("sliding", ("m",))], ["m"])


def test_blend_weight_length_invariant():
    with pytest.raises(ValueError):
        BlendModel("g", ("a", "b"), [1.0], 0.0)


# -- decision rule -------------------------------------------------------------------

U = np.array([1, 1, 1, 2, 2, 3])
B = np.array([10, 20, 30, 10, 40, 50])
S = np.array([0.9, 0.5, 0.5, 0.2, 0.7, 0.6])


def test_infinite_threshold_empty():
    assert len(ensemble_predict(U, B, S[:, None], [1.0], np.inf)) == 0


def test_median_threshold():
    pred = ensemble_predict(U, B, S[:, None], [1.0], np.nextafter(np.median(S), np.inf))
    assert pred == {1: {10}, 2: {40}, 3: {50}}


def test_top_k_hand_ranking():
    pred = ensemble_predict(U, B, S[:, None], [1.0], -np.inf, 2)
    # user 1 ties 20/30 at 0.5 -> lower brand wins
    assert pred == {1: {10, 20}, 2: {10, 40}, 3: {50}}
    assert ensemble_predict(U, B, S[:, None], [1.0], 0.55, 1) == {1: {10}, 2: {40}, 3: {50}}


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=6, max_size=6), st.floats(0, 1), st.floats(0, 1))
def test_threshold_nesting(scores, t1, t2):
    lo, hi = min(t1, t2), max(t1, t2)
    s = np.array(scores)
    for k in (None, 1, 2):
        assert np.all(select_pairs(U, B, s, hi, k) <= select_pairs(U, B, s, lo, k))


def test_scaling_group_reproduces_set():
    rng = np.random.default_rng(6)
    G = rng.random((6, 2))
    w = np.array([0.3, 0.7])
    base = ensemble_predict(U, B, G, w, 0.5, 2)
    c = 7.0
    G2 = G.copy()
    G2[:, 0] *= c
    w2 = np.array([w[0] / c, w[1]])
    assert ensemble_predict(U, B, G2, w2 / w2.sum(), 0.5 / w2.sum(), 2) == base


def test_tune_empty_answer_smallest_set():
    d = tune_decision(U, B, S, {})
    assert d.f1 == 0 and d.n_pred == 0 and d.tau == np.inf


def test_tune_single_top_pair():
    d = tune_decision(U, B, S, {1: {10}})
    assert d.f1 == 1 and d.n_pred == 1


def test_tune_matches_exhaustive_oracle():
    rng = np.random.default_rng(50)
    for trial in range(10):
        n = 50
        user = rng.integers(0, 12, n)
        brand = rng.integers(0, 40, n)
        keep = np.unique(np.stack([user, brand], 1), axis=0, return_index=True)[1]
        user, brand = user[keep], brand[keep]
        score = np.round(rng.random(len(user)), 1)  # ties on purpose
        ans = {}
        for u, b in zip(user, brand):
            if rng.random() < 0.3:
                ans.setdefault(int(u), set()).add(int(b))
        ans.setdefault(99, set()).add(1)  # answer pair outside the candidates
        grid = DecisionGrid(top_fractions=(0.05, 0.1, 0.2, 0.35, 0.5, 0.8, 1.0), ks=(1, 2, None))
        got = tune_decision(user, brand, score, ans, grid)
        best = None
        for tau, k in itertools.product(grid.thresholds(score).tolist(), grid.ks):
            pred = ensemble_predict(user, brand, score[:, None], [1.0], tau, k)
            f = brute_force_prf(pred, ans)[2]
            key = (-f, pred.n_pairs, -tau, np.inf if k is None else k)
            if best is None or key < best[0]:
                best = (key, tau, k, f)
        assert (got.tau, got.k, got.f1) == (best[1], best[2], best[3])


def test_tune_empty_grid_rejected():
    with pytest.raises(ValueError, match="empty"):
        DecisionGrid(top_fractions=())


def test_simplex_grid():
    g = simplex_grid(3, 0.1)
    assert len(g) == 66
    assert all(np.isclose(w.sum(), 1) and np.all(w >= 0) for w in g)
    assert len({tuple(np.round(w, 9)) for w in g}) == 66


def test_tune_ensemble_picks_informative_group():
    rng = np.random.default_rng(9)
    n = 400
    user = np.arange(n) // 4
    brand = np.arange(n) % 4
    truth = rng.random(n) < 0.2
    G = np.stack([truth + 0.3 * rng.random(n), rng.random(n)], axis=1)
    ans = PredictionSet.from_arrays(user[truth], brand[truth])
    tuned = tune_ensemble(user, brand, G, ans)
    assert tuned.weights[0] > tuned.weights[1]
    assert tuned.decision.f1 > 0.9


def test_ensemble_model_roundtrip(tmp_path):
    blends = [BlendModel("fixed", ("a", "b"), [1.5, -0.2], 0.1), BlendModel("global", ("g",), [0.01], -2.0)]
    m = EnsembleModel(blends, [2.0, 6.0], tau=0.25, k=3)
    assert np.allclose(m.weights, [0.25, 0.75])
    m.save(tmp_path / "e.json")
    back = EnsembleModel.load(tmp_path / "e.json")
    assert back.tau == 0.25 and back.k == 3 and np.array_equal(back.weights, m.weights)
    M = np.random.default_rng(0).random((5, 3))
    assert np.array_equal(back.final_score(M, ["a", "b", "g"]), m.final_score(M, ["a", "b", "g"]))
    inf = EnsembleModel(blends, [1, 1], tau=np.inf)
    inf.save(tmp_path / "i.json")
    assert EnsembleModel.load(tmp_path / "i.json").tau == np.inf
    with pytest.raises(ValueError, match="nonnegative"):
        EnsembleModel(blends, [1.0, -1.0])


def test_roles_disjoint_by_user():
    users = np.arange(5000)
    role = assign_roles(users)
    bucket = user_hash(users) % np.uint64(100)
    assert np.all((role != ROLE_TRAIN) == (bucket >= 80))
    assert np.all((role == ROLE_TUNE) == (bucket >= 90))
    share = np.mean(role != ROLE_TRAIN)
    assert 0.17 < share < 0.23
    assert set(np.unique(role)) == {ROLE_TRAIN, ROLE_BLEND, ROLE_TUNE}
