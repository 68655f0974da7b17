import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from retail_marl.env import OBS_DIM
from retail_marl.eval import (EpisodeResult, EvalError, StaticPolicy, evaluate, jain_index, lambda_sweep,
                              paired_stats, read_episodes, stability_metric, write_episodes, write_figure_data,
                              write_report)
from retail_marl.marl import ActorCritic, NetConfig

HOLD = StaticPolicy([2, 2, 2])
CHEAP = StaticPolicy([0, 1, 2])


@pytest.mark.parametrize("x,j", [([2.0, 2.0, 2.0], 1.0), ([1, 0, 0, 0], 0.25), ([3, 1], 0.8)])
def test_jain_fixtures(x, j):
    assert jain_index(x) == j


def test_jain_zero_vector_flagged():
    assert jain_index([0, 0, 0], return_flag=True) == (1.0, True)
    assert jain_index([-1, 2, 2]) == jain_index([0, 2, 2])


@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=30), st.floats(1e-3, 1e3))
def test_jain_bounds_and_scale(x, c):
    x = np.array(x)
    if not np.any(x > 0):
        return
    j = jain_index(x)
    assert 1 / len(x) - 1e-12 <= j <= 1 + 1e-12
    assert jain_index(c * x) == pytest.approx(j, rel=1e-9)


@pytest.mark.parametrize("prices,s", [([[10.0], [10.0], [10.0]], 0.0), ([[10.0], [11.0]], 10.0),
                                      ([[10.0], [11.0], [11.0]], 5.0)])
def test_stability_fixtures(prices, s):
    assert stability_metric(np.array(prices)) == pytest.approx(s, abs=1e-12)


def test_stability_needs_two_steps():
    with pytest.raises(EvalError):
        stability_metric(np.array([[1.0]]))


def result(seed, ep, method, profit):
    return EpisodeResult(seed, ep, method, float(profit), (float(profit),), 0.0, 1.0)


def test_paired_fixture():
    a = [result(s, 0, "A", 10) for s in range(3)]
    b = [result(0, 0, "B", 11), result(1, 0, "B", 11), result(2, 0, "B", 9)]
    rep = paired_stats(a, b)
    assert (rep.wins, rep.losses, rep.ties) == (2, 1, 0)
    assert rep.mean_diff == pytest.approx(1 / 3)
    assert rep.to_dict()["win_rate"] == "2/3"


def test_identical_methods_tie():
    a = [result(s, e, "A", 5 + e) for s in range(4) for e in range(3)]
    rep = paired_stats(a, a)
    assert rep.ties == 4 and rep.mean_diff == 0.0 and (rep.ci_low, rep.ci_high) == (0.0, 0.0)


def test_fifteen_seed_win_rate_form():
    a = [result(s, 0, "mappo", 0) for s in range(15)]
    b = [result(s, 0, "mappo-gat", 1 if s < 10 else -1) for s in range(15)]
    assert paired_stats(a, b).to_dict()["win_rate"] == "10/15"


def test_unpaired_results_rejected():
    with pytest.raises(EvalError, match=r"missing from B \[\(1, 0\)\]"):
        paired_stats([result(0, 0, "A", 1), result(1, 0, "A", 1)], [result(0, 0, "B", 1)])
    with pytest.raises(EvalError, match="duplicate"):
        paired_stats([result(0, 0, "A", 1)] * 2, [result(0, 0, "B", 1)])


def test_eval_deterministic_and_complete(envs):
    a = evaluate(CHEAP, envs.test, 100, 0)
    b = evaluate(CHEAP, envs.test, 100, 0)
    assert a == b
    assert len(a) == 100 and sorted(r.episode for r in a) == list(range(100))


def test_label_swap_negates(envs, market):
    net = NetConfig(mappo_hidden=12, gat_hidden=8, heads=2, head_hidden=8, critic_hidden=8)
    p1 = ActorCritic("mappo", market.graph, OBS_DIM, 5, net, seed=1)
    p2 = ActorCritic("mappo-gat", market.graph, OBS_DIM, 5, net, seed=2)
    r1 = [r for s in range(3) for r in evaluate(p1, envs.test, 10, s, method="x")]
    r2 = [r for s in range(3) for r in evaluate(p2, envs.test, 10, s, method="y")]
    ab, ba = paired_stats(r1, r2), paired_stats(r2, r1)
    assert np.array_equal(np.array(ab.episode_diffs), -np.array(ba.episode_diffs))
    assert (ab.wins, ab.losses) == (ba.losses, ba.wins)


def test_crn_reduces_variance(envs):
    for rep in range(5):
        a = evaluate(HOLD, envs.test, 50, rep, "shared")
        b = evaluate(CHEAP, envs.test, 50, rep, "shared")
        c = evaluate(CHEAP, envs.test, 50, rep, "independent")
        shared = np.var([y.profit - x.profit for x, y in zip(a, b)])
        indep = np.var([y.profit - x.profit for x, y in zip(a, c)])
        assert shared < indep


def test_lambda_sweep_single_row_matches_plain(envs):
    rows = lambda_sweep([0.0], lambda lam: CHEAP, lambda lam: envs.test, 20, seeds=(0, 1))
    plain = evaluate(CHEAP, envs.test, 20, 0) + evaluate(CHEAP, envs.test, 20, 1)
    assert len(rows) == 1 and rows[0].episodes == 40
    assert rows[0].mean_profit == pytest.approx(np.mean([r.profit for r in plain]), rel=1e-12)


def test_lambda_sweep_errors(envs):
    with pytest.raises(EvalError, match="empty"):
        lambda_sweep([], lambda lam: CHEAP, lambda lam: envs.test, 5)
    with pytest.raises(EvalError, match=">= 0"):
        lambda_sweep([-1.0], lambda lam: CHEAP, lambda lam: envs.test, 5)

    def boom(lam):
        if lam == 0.5:
            raise RuntimeError("diverged")
        return CHEAP

    rows = lambda_sweep([0.0, 0.5, 2.0], boom, lambda lam: envs.test, 5)
    assert [r.error != "" for r in rows] == [False, True, False]


def test_outputs(tmp_path, envs):
    a = evaluate(HOLD, envs.test, 8, 0, method="mappo") + evaluate(HOLD, envs.test, 8, 1, method="mappo")
    b = evaluate(CHEAP, envs.test, 8, 0, method="mappo-gat") + evaluate(CHEAP, envs.test, 8, 1, method="mappo-gat")
    write_episodes(a, tmp_path / "a.csv")
    assert read_episodes(tmp_path / "a.csv") == a
    rep = paired_stats(a, b)
    write_report(rep, tmp_path / "r.csv", tmp_path / "r.json")
    summary = json.loads((tmp_path / "r.json").read_text())
    assert {"wins", "losses", "ties", "ci_low", "ci_high", "win_rate"} <= set(summary)
    paths = write_figure_data(rep, tmp_path / "fig")
    assert [p.name[:4] for p in paths] == [f"fig{i}" for i in range(1, 7)]
    hist = np.loadtxt(paths[1], delimiter=",", skiprows=1)
    assert hist[:, 2].sum() == 16
