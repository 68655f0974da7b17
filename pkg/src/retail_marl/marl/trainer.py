"""MAPPO training loop: collect, GAE, clipped update, validation checkpointing."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .. import rng as rngmod
from ..env import PricingEnv
from ..nn import Adam, Sgd
from .buffer import collect_rollouts, compute_gae, make_runners
from .policy import ActorCritic, NetConfig
from .ppo import ppo_update

logger = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    def __init__(self, message: str, last_good: dict | None):
        super().__init__(message)
        self.last_good = last_good


@dataclass(frozen=True)
class TrainConfig:
    clip_eps: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    gae_lambda: float = 0.95
    gamma: float = 1.0
    lr: float = 3e-4
    optimizer: str = "sgd"
    momentum: float = 0.9
    weight_decay: float = 1e-4
    max_grad_norm: float = 0.5
    epochs: int = 4
    minibatch_size: int = 256
    rollout_steps: int = 128
    n_envs: int = 8
    total_steps: int = 60_000
    seed: int = 0
    val_every: int = 5
    val_episodes: int = 8
    net: NetConfig = field(default_factory=NetConfig)

    def __post_init__(self):
        if not 0.05 <= self.clip_eps <= 0.5:
            raise ValueError("clip_eps must lie in [0.05, 0.5]")
        for name in ("gae_lambda", "gamma"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")
        for name in ("epochs", "minibatch_size", "rollout_steps", "n_envs", "total_steps", "val_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def steps_per_update(self) -> int:
        return self.rollout_steps * self.n_envs

    @property
    def num_updates(self) -> int:
        return math.ceil(self.total_steps / self.steps_per_update)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        if isinstance(d.get("net"), dict):
            d["net"] = NetConfig(**d["net"])
        return cls(**d)


@dataclass
class TrainResult:
    model: ActorCritic
    best_params: dict[str, np.ndarray]
    best_val_profit: float
    best_update: int
    curve: list[dict]
    reward_scale: float

    def best_model(self) -> ActorCritic:
        self.model.restore(self.best_params)
        return self.model


CURVE_HEADER = ("update", "env_steps", "mean_rollout_reward", "mean_episode_profit", "val_profit", "policy_loss",
                "value_loss", "entropy", "clip_frac", "approx_kl", "grad_norm")


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return Adam(cfg.lr, weight_decay=cfg.weight_decay)
    return Sgd(cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)


def reference_reward_scale(env: PricingEnv, seed: int) -> float:
    """Mean absolute per-step reward of the hold-at-reference policy on one training episode."""
    key = ("reward-scale", seed)
    state, _ = env.reset(env.draw_start(key), key)
    hold = np.full(env.n_agents, env.config.multipliers.index(1.0))
    total = 0.0
    for _ in range(env.config.horizon):
        res = env.step(state, hold)
        total += abs(res.reward)
        state = res.state
    return max(total / env.config.horizon, 1e-8)


def validate(model: ActorCritic, env: PricingEnv, episodes: int, seed: int) -> float:
    from ..eval import evaluate

    return float(np.mean([r.profit for r in evaluate(model, env, episodes, seed, "validation")]))


def _finite(model: ActorCritic) -> bool:
    return all(np.all(np.isfinite(p.data)) for p in model.parameters().values())


def train(cfg: TrainConfig, train_env: PricingEnv, val_env: PricingEnv | None, arch: str,
          curve_path: str | Path | None = None) -> TrainResult:
    """Train one seed. Keeps the parameters with the best greedy validation profit.

    Without a validation environment the final parameters are kept.
    """
    from ..env import OBS_DIM

    model = ActorCritic(arch, train_env.graph, OBS_DIM, train_env.n_actions, cfg.net, seed=cfg.seed)
    opt = make_optimizer(cfg)
    rng = rngmod.stream("train", arch, cfg.seed)
    runners = make_runners(train_env, cfg.n_envs, cfg.seed)
    scale = reference_reward_scale(train_env, cfg.seed)
    best = (-math.inf, model.snapshot(), -1)
    curve: list[dict] = []
    env_steps = 0
    for update in range(cfg.num_updates):
        last_good = model.snapshot()
        buf = collect_rollouts(model, runners, cfg.rollout_steps, rng, scale)
        env_steps += len(buf)
        buf.advantages, buf.returns = compute_gae(buf.rewards, buf.values, buf.dones, buf.last_values,
                                                  cfg.gamma, cfg.gae_lambda)
        try:
            stats = ppo_update(model, buf, cfg, opt, rng)
        except FloatingPointError as exc:
            raise TrainingDiverged(f"update {update}: {exc}", best[1]) from exc
        if not _finite(model):
            model.restore(last_good)
            raise TrainingDiverged(f"non-finite parameters after update {update}", best[1])
        row = {"update": update, "env_steps": env_steps, "mean_rollout_reward": float(buf.raw_rewards.mean()),
               "mean_episode_profit": float(np.mean([c["profit"] for c in buf.completed])) if buf.completed else float("nan"),
               "val_profit": float("nan"), **{k: stats[k] for k in CURVE_HEADER if k in stats}}
        last = update == cfg.num_updates - 1
        if val_env is not None and ((update + 1) % cfg.val_every == 0 or last):
            v = validate(model, val_env, cfg.val_episodes, cfg.seed)
            row["val_profit"] = v
            if v > best[0]:
                best = (v, model.snapshot(), update)
        curve.append(row)
        logger.debug("update %d: %s", update, row)
    if val_env is None:
        best = (float("nan"), model.snapshot(), cfg.num_updates - 1)
    if curve_path is not None:
        write_curve(curve, curve_path)
    return TrainResult(model, best[1], best[0], best[2], curve, scale)


def write_curve(curve: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CURVE_HEADER, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for row in curve:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
