"""Rollout storage, synchronized collection over parallel environments, and GAE."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..env import EnvState, PricingEnv
from .policy import ActorCritic


class RolloutError(RuntimeError):
    pass


@dataclass
class RolloutBuffer:
    """Arrays indexed [step, env] (and [..., agent] for per-agent columns).

    ``rewards`` are the shared team rewards divided by the trainer's reward
    scale; ``raw_rewards`` keep environment units.
    """

    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    raw_rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    time_left: np.ndarray
    episode_ids: np.ndarray
    last_values: np.ndarray
    masks: tuple[np.ndarray, np.ndarray] | None = None
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None
    completed: list[dict] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return self.obs.shape[0]

    @property
    def n_envs(self) -> int:
        return self.obs.shape[1]

    @property
    def n_agents(self) -> int:
        return self.obs.shape[2]

    def __len__(self) -> int:
        return self.steps * self.n_envs


def compute_gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
                last_values: np.ndarray | None, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """GAE(lambda) along axis 0. ``dones[t]`` marks that step t ended its episode.

    ``last_values`` bootstraps the value after the final step; it may be None
    only if every column ends on a terminal step.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    if last_values is None:
        if not np.all(dones[-1]):
            raise RolloutError("bootstrap value required for non-terminal rollout tails")
        last_values = np.zeros_like(values[-1])
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    next_adv = np.zeros_like(rewards[0])
    next_value = np.asarray(last_values, dtype=float)
    for t in range(T - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        next_adv = delta + gamma * lam * live * next_adv
        adv[t] = next_adv
        next_value = values[t]
    return adv, adv + values


class EnvRunner:
    """One environment plus its running episode; resets itself on episode end."""

    def __init__(self, env: PricingEnv, namespace: object, index: int):
        self.env = env
        self.namespace = namespace
        self.index = index
        self.episode = 0
        self.state: EnvState | None = None
        self.obs: np.ndarray | None = None
        self.key: object = None
        self.episode_profit = 0.0
        self.episode_reward = 0.0

    def reset(self) -> None:
        self.key = (self.namespace, self.index, self.episode)
        self.state, self.obs = self.env.reset(self.env.draw_start(self.key), self.key)
        self.episode_profit = 0.0
        self.episode_reward = 0.0

    def time_left(self) -> float:
        return (self.env.config.horizon - self.state.t) / self.env.config.horizon


def collect_rollouts(ac: ActorCritic, runners: list[EnvRunner], steps: int, rng: np.random.Generator,
                     reward_scale: float = 1.0) -> RolloutBuffer:
    """Step all runners ``steps`` times in lockstep with one policy snapshot."""
    N = len(runners)
    for r in runners:
        if r.state is None:
            r.reset()
    n = runners[0].env.n_agents
    obs_dim = runners[0].obs.shape[-1]
    obs = np.zeros((steps, N, n, obs_dim))
    actions = np.zeros((steps, N, n), dtype=np.int64)
    logp = np.zeros((steps, N, n))
    raw = np.zeros((steps, N))
    values = np.zeros((steps, N))
    dones = np.zeros((steps, N))
    time_left = np.zeros((steps, N))
    episode_ids = np.empty((steps, N), dtype=object)
    keep = drop = None
    if ac.uses_graph:
        keep = np.zeros((steps, N, ac.n_edges, 1))
        drop = np.zeros((steps, N, ac.n_edges, ac.actor.gat.heads))
    completed = []
    for t in range(steps):
        obs[t] = np.stack([r.obs for r in runners])
        time_left[t] = [r.time_left() for r in runners]
        masks = ac.sample_masks(rng, N)
        if masks is not None:
            keep[t], drop[t] = masks
        sample, v = ac.act(obs[t], time_left[t], rng=rng, masks=masks)
        actions[t], logp[t], values[t] = sample.action, sample.log_prob, v
        for e, r in enumerate(runners):
            episode_ids[t, e] = (r.key, r.state.t)
            try:
                res = r.env.step(r.state, actions[t, e])
            except Exception as exc:
                raise RolloutError(f"environment {r.index} failed at step {t}: {exc}") from exc
            raw[t, e] = res.reward
            r.episode_profit += float(res.profits.sum())
            r.episode_reward += res.reward
            r.state, r.obs = res.state, res.obs
            if res.done:
                dones[t, e] = 1.0
                completed.append({"env": r.index, "key": r.key, "profit": r.episode_profit,
                                  "reward": r.episode_reward})
                r.episode += 1
                r.reset()
    last_obs = np.stack([r.obs for r in runners])
    last_tl = np.array([r.time_left() for r in runners])
    _, last_values = ac.act(last_obs, last_tl, greedy=True)
    return RolloutBuffer(obs, actions, logp, raw / reward_scale, raw, values, dones, time_left, episode_ids,
                         last_values, None if keep is None else (keep, drop), completed=completed)


def make_runners(env: PricingEnv, n_envs: int, seed: int, namespace: str = "train") -> list[EnvRunner]:
    return [EnvRunner(env, (namespace, seed), i) for i in range(n_envs)]


def replay_rewards(env: PricingEnv, key: object, start, actions: np.ndarray) -> list[float]:
    """Re-run an episode from ``key``/``start`` with logged actions; rewards per step."""
    state, _ = env.reset(start, key)
    out = []
    for a in actions:
        res = env.step(state, a)
        out.append(res.reward)
        state = res.state
    return out


__all__ = ["RolloutBuffer", "compute_gae", "collect_rollouts", "EnvRunner", "make_runners", "replay_rewards",
           "RolloutError"]
