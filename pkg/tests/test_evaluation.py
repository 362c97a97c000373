"""Rolling predictions, rank metrics and residual tables."""

from __future__ import annotations

import dataclasses
import datetime as dt
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from monodlm.evaluation import (HIGHER_IS_BETTER, LOWER_IS_BETTER,
                                GamePrediction, evaluate, game_spearman,
                                normal_plotting_quantiles, predict_test_games,
                                qq_table, rank_scores, standardized_residuals,
                                weighted_spearman, weighted_spearman_details,
                                win_accuracy)
from monodlm.fitting import FitWarning, fast_update, fit_map, refilter
from monodlm.preprocess import HEAD_TO_HEAD, RawResult, assign_rating_periods
from monodlm.simulation import SimConfig, simulate_dataset

import oracles


def gp(pred, obs, orientation=HIGHER_IS_BETTER, pdiff=math.nan,
       odiff=math.nan):
    pred, obs = np.asarray(pred, float), np.asarray(obs, float)
    ids = tuple(f"a{i}" for i in range(pred.size))
    return GamePrediction(1, "g", ids, pred, obs,
                          rank_scores(pred, orientation),
                          rank_scores(obs, orientation), pdiff, odiff)


def h2h(pdiff, odiff):
    return gp([pdiff, 0.0], [odiff, 0.0], pdiff=pdiff, odiff=odiff)


@pytest.fixture(scope="module")
def fitted():
    sim = simulate_dataset(SimConfig(p=30, T=9, n_tg=6, games_per_period=8,
                                     seed=8))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FitWarning)
        model = fit_map(sim.dataset, max_iter=200, restarts=0)
    return sim.dataset, model


# -------------------------------------------------------------- ranks

def test_rank_orientation():
    np.testing.assert_array_equal(rank_scores([1.0, -1.0]), [1, 2])
    np.testing.assert_array_equal(rank_scores([1.0, -1.0], LOWER_IS_BETTER),
                                  [2, 1])
    np.testing.assert_array_equal(rank_scores([0.0, 0.0, 0.0]), [2, 2, 2])
    with pytest.raises(ValueError):
        rank_scores([1.0], "sideways")


# -------------------------------------------------------------- Spearman

def test_perfect_predictions():
    preds = [gp([3, 2, 1], [30, 20, 10]), gp([1, 2], [5, 9])]
    assert weighted_spearman(preds) == 1.0


def test_weighted_hand_case():
    preds = [gp([3, 2, 1], [9, 5, 0]), gp([1, 2], [9, 5])]
    assert game_spearman(preds[0]) == 1.0 and game_spearman(preds[1]) == -1.0
    assert weighted_spearman(preds) == pytest.approx(1 / 3, abs=1e-15)


def test_two_athlete_correct_winner():
    assert weighted_spearman([gp([0.2, -0.2], [71, 64])]) == 1.0


def test_all_tied_observed_excluded():
    preds = [gp([1, 2, 3], [4, 4, 4]), gp([1, 2], [1, 2])]
    d = weighted_spearman_details(preds)
    assert d == {"weighted_spearman": 1.0, "games_used": 1,
                 "games_excluded": 1}
    assert math.isnan(weighted_spearman(preds[:1]))


def test_constant_predictions_score_zero():
    assert game_spearman(gp([0, 0, 0], [1, 2, 3])) == 0.0


def test_spearman_requires_two_athletes():
    with pytest.raises(ValueError):
        weighted_spearman([gp([1.0], [1.0])])


def test_matches_scipy_randomized():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        n = int(rng.integers(2, 12))
        pred = rng.integers(0, 4, n).astype(float)
        obs = rng.integers(0, 5, n).astype(float)
        if np.all(obs == obs[0]) or np.all(pred == pred[0]):
            continue
        g = gp(pred, obs)
        assert game_spearman(g) == pytest.approx(
            oracles.spearman_scipy(pred, obs), abs=1e-12)


def test_equal_sizes_reduce_to_mean():
    rng = np.random.default_rng(1)
    preds = [gp(rng.normal(size=5), rng.normal(size=5)) for _ in range(7)]
    assert weighted_spearman(preds) == pytest.approx(
        np.mean([game_spearman(p) for p in preds]), abs=1e-14)


games = st.lists(
    st.integers(2, 8).flatmap(lambda n: st.tuples(
        st.lists(st.floats(-100, 100), min_size=n, max_size=n),
        st.lists(st.integers(0, 5), min_size=n, max_size=n))),
    min_size=1, max_size=6)


@settings(max_examples=200, deadline=None)
@given(games)
def test_monotone_transform_invariance_and_bounds(gs):
    base = [gp(p, o) for p, o in gs]
    moved = [gp(np.arctan(np.asarray(p) / 7) * 3 + 11, o) for p, o in gs]
    a, b = weighted_spearman(base), weighted_spearman(moved)
    if math.isnan(a):
        assert math.isnan(b)
    else:
        assert -1 - 1e-12 <= a <= 1 + 1e-12
        # arctan can merge nearly equal floats, so compare ranks first
        if all(np.array_equal(x.predicted_ranks, y.predicted_ranks)
               for x, y in zip(base, moved)):
            assert a == b


@settings(max_examples=200, deadline=None)
@given(games, st.data())
def test_athlete_order_invariance(gs, data):
    base = weighted_spearman([gp(p, o) for p, o in gs])
    shuffled = []
    for p, o in gs:
        perm = data.draw(st.permutations(range(len(p))))
        shuffled.append(gp(np.asarray(p)[perm], np.asarray(o)[perm]))
    other = weighted_spearman(shuffled)
    assert (math.isnan(base) and math.isnan(other)) or \
        other == pytest.approx(base, abs=1e-12)


# -------------------------------------------------------------- accuracy

def test_accuracy_hand_cases():
    assert win_accuracy([h2h(1, 2), h2h(-3, -1)]) == 1.0
    assert win_accuracy([h2h(0.0, 2), h2h(0.0, -1), h2h(0.0, 5)]) == 0.5
    assert win_accuracy([h2h(1, 3), h2h(-1, 2), h2h(-2, -4)]) == 2 / 3
    assert win_accuracy([h2h(1, 0.0)]) == 0.5
    assert math.isnan(win_accuracy([]))
    with pytest.raises(ValueError):
        win_accuracy([gp([1, 2], [1, 2])])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=1,
                max_size=20))
def test_accuracy_swap_invariant(pairs):
    a = win_accuracy([h2h(p, o) for p, o in pairs])
    b = win_accuracy([h2h(-p, -o) for p, o in pairs])
    assert a == b and 0 <= a <= 1


# -------------------------------------------------------------- residual tables

def test_qq_edge_cases():
    t = qq_table(np.zeros(4))
    np.testing.assert_array_equal(t.standardized, 0.0)
    assert math.isnan(t.qq_correlation)
    one = qq_table([1.7])
    assert one.quantiles.tolist() == [0.0]
    q = normal_plotting_quantiles(4)
    np.testing.assert_allclose(q, -q[::-1], atol=1e-15)


def test_qq_table_sorted_pairs():
    t = qq_table([2.0, -1.0, 0.5], residuals=[4.0, -2.0, 1.0])
    np.testing.assert_array_equal(t.standardized, [-1.0, 0.5, 2.0])
    np.testing.assert_array_equal(t.residuals, [-2.0, 1.0, 4.0])


# -------------------------------------------------------------- model based

def test_prediction_ranks_follow_prior_means(fitted):
    ds, model = fitted
    preds = predict_test_games(model, ds)
    assert {p.t for p in preds} == set(range(model.T_train + 1, ds.T + 1))
    for p in preds:
        np.testing.assert_array_equal(p.predicted_ranks,
                                      rank_scores(p.predicted_scores))
        assert p.predicted_ranks.sum() == p.n_tg * (p.n_tg + 1) / 2
        assert abs(p.predicted_scores.sum()) < 1e-9


def test_rolling_equals_fast_update_chain(fitted):
    ds, model = fitted
    head = refilter(model, ds.prefix(model.T_train))
    chained = head
    for t in range(model.T_train + 1, ds.T + 1):
        per = ds.periods[t - 1]
        prior = chained.filter_result.final
        for g in per.games:
            m = prior.m[g.athletes]
            mine = [p for p in predict_test_games(model, ds, [t])
                    if p.game_id == g.game_id][0]
            np.testing.assert_array_equal(mine.predicted_scores, m - m.mean())
        chained = fast_update(chained, per)


def test_future_periods_do_not_matter(fitted):
    ds, model = fitted
    t = model.T_train + 1
    base = standardized_residuals(model, ds, [t])
    rng = np.random.default_rng(0)
    late = list(ds.periods)
    for i in range(t, ds.T):
        games = tuple(dataclasses.replace(g, scores=rng.permutation(g.scores))
                      for g in late[i].games)
        late[i] = dataclasses.replace(late[i], games=games)
    ds2 = dataclasses.replace(ds, periods=tuple(late))
    model2 = refilter(model, ds2)
    other = standardized_residuals(model2, ds2, [t])
    np.testing.assert_array_equal(base.standardized, other.standardized)


def test_residual_table_covers_period(fitted):
    ds, model = fitted
    t = model.T_train + 1
    table = standardized_residuals(model, ds, [t])
    assert table.standardized.size == ds.periods[t - 1].n_obs
    assert np.all(np.diff(table.standardized) >= 0)
    assert np.all(np.sign(table.residuals) == np.sign(table.standardized))


def test_evaluate_metrics(fitted):
    ds, model = fitted
    metrics, table = evaluate(model, ds)
    assert metrics["mode"] == "multi_competitor"
    assert -1 <= metrics["weighted_spearman"] <= 1
    assert metrics["n_residuals"] == table.standardized.size > 0
    assert metrics["games_excluded"] == 0


def test_alignment_checks(fitted):
    ds, model = fitted
    with pytest.raises(ValueError, match="mode"):
        predict_test_games(model, dataclasses.replace(ds, mode=HEAD_TO_HEAD))
    short = refilter(model, ds.prefix(ds.T - 3))
    with pytest.raises(ValueError, match="periods"):
        predict_test_games(short, ds)


def test_unseen_athlete_predicted_at_zero():
    rs = [RawResult(dt.date(2001, 1, 1), "g1", "a", 3.0),
          RawResult(dt.date(2001, 1, 1), "g1", "b", 1.0),
          RawResult(dt.date(2001, 1, 2), "g2", "a", 2.0),
          RawResult(dt.date(2001, 1, 2), "g2", "b", 5.0),
          RawResult(dt.date(2001, 1, 3), "g3", "a", 1.0),
          RawResult(dt.date(2001, 1, 3), "g3", "c", 4.0),
          RawResult(dt.date(2001, 1, 3), "g3", "b", 4.5),
          RawResult(dt.date(2002, 1, 3), "g4", "c", 7.0),
          RawResult(dt.date(2002, 1, 3), "g4", "a", 5.0),
          RawResult(dt.date(2002, 1, 3), "g4", "b", 6.0),
          RawResult(dt.date(2003, 1, 3), "g5", "d", 1.0),
          RawResult(dt.date(2003, 1, 3), "g5", "a", 2.0),
          RawResult(dt.date(2003, 1, 3), "g5", "b", 1.5)]
    ds = assign_rating_periods(rs, "annual")
    early = assign_rating_periods(rs[:10], "annual")
    assert early.p == 3
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FitWarning)
        model = fit_map(early, n_interior=1, degree=1, max_iter=30,
                        restarts=0)
    preds = predict_test_games(model, ds, [3])
    (g5,) = preds
    assert g5.unseen == (True, False, False)
    m = model.filter_result.final.m
    raw = np.array([0.0, m[0], m[1]])
    np.testing.assert_allclose(g5.predicted_scores, raw - raw.mean())
