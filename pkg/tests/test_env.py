import dataclasses
import datetime as dt

import numpy as np
import pytest
from hypothesis import given, strategies as st

from retail_marl.demand import N_FEATURES, DemandOracle
from retail_marl.env import (OBS_DIM, EnvConfig, EnvError, PricingEnv, action_space, make_envs, write_trajectory,
                             load_env_config)
from retail_marl.ingest import Catalog, SalesPanel
from retail_marl.synthetic import complete_graph

START = dt.date(2011, 1, 1)


def two_sku_env(quantities=(3, 10), sigma=0.0, lam=0.0, window_days=(7, 29), horizon=5, coef=None):
    skus = ("A", "B")
    ref = np.array([10.0, 5.0])
    catalog = Catalog(skus, ref, np.array([6.0, 3.0]), (START, START + dt.timedelta(days=29)), np.ones(2))
    q = np.full((30, 2), 4, dtype=np.int64)
    panel = SalesPanel(skus, START, q, np.tile(ref, (30, 1)), np.ones_like(q))
    oracle = DemandOracle(skus, np.zeros((2, N_FEATURES)) if coef is None else coef,
                          np.log1p(np.asarray(quantities, dtype=float)), np.full(2, sigma))
    window = (START + dt.timedelta(days=window_days[0]), START + dt.timedelta(days=window_days[1]))
    cfg = EnvConfig(window, horizon=horizon, lambda_stab=lam)
    return PricingEnv(catalog, panel, complete_graph(skus), oracle, cfg)


HOLD = np.array([2, 2])


def test_reward_hand_arithmetic():
    env = two_sku_env()
    state, obs = env.reset(env.config.window[0], "k")
    res = env.step(state, HOLD)
    assert res.quantities.tolist() == [3.0, 10.0]
    assert res.profits.tolist() == [12.0, 20.0]
    assert res.reward == 32.0


def test_zero_demand_zero_reward():
    env = two_sku_env(quantities=(0, 0))
    state, _ = env.reset(env.config.window[0], "k")
    assert env.step(state, HOLD).reward == 0.0


def test_unchanged_prices_no_penalty():
    env = two_sku_env(lam=5.0)
    state, _ = env.reset(env.config.window[0], "k")
    res = env.step(state, HOLD)
    assert res.penalty == 0.0 and res.reward == 32.0
    res2 = env.step(res.state, np.array([4, 0]))
    assert res2.penalty == pytest.approx(5.0 * (np.log(1.2) + abs(np.log(0.8))))
    assert res2.reward == pytest.approx(res2.profits.sum() - res2.penalty, abs=0)


def test_initial_prices_are_reference():
    env = two_sku_env()
    state, obs = env.reset(env.config.window[0], "k")
    np.testing.assert_array_equal(state.prices, env.ref)
    assert obs.shape == (2, OBS_DIM)


def test_start_boundary():
    env = two_sku_env(window_days=(7, 11), horizon=5)
    env.reset(START + dt.timedelta(days=7), "k")
    with pytest.raises(EnvError, match="valid starts"):
        env.reset(START + dt.timedelta(days=8), "k")
    assert env.start_days() == [START + dt.timedelta(days=7)]


def test_window_needs_history():
    with pytest.raises(EnvError, match="full history"):
        two_sku_env(window_days=(3, 20))


@pytest.mark.parametrize("mult,n", [((0.8, 0.9, 1.0, 1.1, 1.2), 5), ((1.0,), 1)])
def test_action_space(mult, n):
    assert action_space(EnvConfig((START, START), mult, horizon=1)) == n


@pytest.mark.parametrize("mult", [(), (0.9, 1.1), (1.2, 1.0), (0.3, 1.0)])
def test_bad_multipliers(mult):
    with pytest.raises(EnvError):
        EnvConfig((START, START), mult)


def test_bad_actions():
    env = two_sku_env()
    state, _ = env.reset(env.config.window[0], "k")
    with pytest.raises(EnvError, match="integers in"):
        env.step(state, np.array([0, 5]))
    with pytest.raises(EnvError, match="expected 2 actions"):
        env.step(state, np.array([0]))


def test_episode_ends():
    env = two_sku_env(horizon=2)
    state, _ = env.reset(env.config.window[0], "k")
    r1 = env.step(state, HOLD)
    r2 = env.step(r1.state, HOLD)
    assert not r1.done and r2.done
    with pytest.raises(EnvError, match="finished"):
        env.step(r2.state, HOLD)


def rollout(env, key, actions):
    state, obs = env.reset(env.draw_start(key), key)
    out = [obs]
    for a in actions:
        res = env.step(state, a)
        state = res.state
        out.append((res.obs, res.quantities, res.reward, res.state.prices))
    return out


action_seqs = st.lists(st.lists(st.integers(0, 4), min_size=3, max_size=3), min_size=19, max_size=19)


@given(action_seqs, st.integers(0, 1000))
def test_deterministic_trajectory(envs, actions, key):
    a = rollout(envs.test, ("t", key), np.array(actions))
    b = rollout(envs.test, ("t", key), np.array(actions))
    np.testing.assert_array_equal(a[0], b[0])
    for x, y in zip(a[1:], b[1:]):
        for u, v in zip(x, y):
            np.testing.assert_array_equal(u, v)


@given(action_seqs, action_seqs, st.integers(0, 1000))
def test_crn_noise_independent_of_actions(envs, acts_a, acts_b, key):
    env = envs.test
    sa, _ = env.reset(env.draw_start(key), key)
    sb, _ = env.reset(env.draw_start(key), key)
    for a, b in zip(acts_a, acts_b):
        sa, sb = env.step(sa, np.array(a)).state, env.step(sb, np.array(b)).state
    np.testing.assert_array_equal(sa.noise, sb.noise)
    assert sa.start == sb.start


@given(action_seqs, st.integers(0, 1000), st.sampled_from([0.0, 0.5, 2.0]))
def test_price_bounds_and_reward_decomposition(envs, actions, key, lam):
    env = envs.test
    env = PricingEnv(env.catalog, env.panel, env.graph, env.oracle,
                     dataclasses.replace(env.config, lambda_stab=lam), env.normalizer)
    state, _ = env.reset(env.draw_start(key), key)
    for a in actions:
        res = env.step(state, np.array(a))
        assert np.all(res.state.prices >= 0.8 * env.ref - 1e-12)
        assert np.all(res.state.prices <= 1.2 * env.ref + 1e-12)
        assert res.reward == float(np.sum(res.profits)) - res.penalty
        state = res.state


def test_noise_independent_of_other_keys(envs):
    s1, _ = envs.test.reset(envs.test.config.window[0], "a")
    s2, _ = envs.test.reset(envs.test.config.window[0], "b")
    assert not np.array_equal(s1.noise, s2.noise)


def test_split_windows(market, envs):
    assert envs.test.config.window == (market.split, market.panel.end)
    assert envs.val.config.window[1] == market.split - dt.timedelta(days=1)
    assert envs.train.config.window[1] < envs.val.config.window[0]
    assert envs.test.config.horizon == 19 and envs.val.config.horizon == 14
    assert envs.test.start_days() == [market.split]


def test_config_and_trajectory_io(tmp_path):
    cfg = EnvConfig((START, START + dt.timedelta(days=9)), horizon=4, lambda_stab=0.5)
    import json

    (tmp_path / "env.json").write_text(json.dumps(cfg.to_dict()))
    assert load_env_config(tmp_path / "env.json") == cfg
    write_trajectory([(0, "2011-01-01", "A", 1.0, 2, 0.5)], tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "episode,day,sku,price,quantity,profit"
