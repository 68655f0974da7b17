"""Multi-SKU pricing environment driven by the demand oracle.

Each SKU is an agent choosing a price multiplier of its reference price. The
environment object is stateless: ``reset`` and ``step`` take and return an
explicit :class:`EnvState`, so trajectories are pure functions of the
episode key and the action sequence.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import rng as rngmod
from .demand import (EMA_ALPHA, MIN_HISTORY, DemandOracle, design_matrix, ema_history,
                     neighbor_mean_log_price)
from .graph import ItemGraph
from .ingest import Catalog, SalesPanel

DEFAULT_MULTIPLIERS = (0.8, 0.9, 1.0, 1.1, 1.2)
N_CONTINUOUS = 6
OBS_DIM = N_CONTINUOUS + 7 + 12


class EnvError(ValueError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    window: tuple[dt.date, dt.date]
    multipliers: tuple[float, ...] = DEFAULT_MULTIPLIERS
    horizon: int = 19
    lambda_stab: float = 0.0
    gamma: float = 1.0
    stride: int = 1

    def __post_init__(self):
        m = tuple(float(x) for x in self.multipliers)
        object.__setattr__(self, "multipliers", m)
        if not m:
            raise EnvError("multiplier set is empty")
        if 1.0 not in m:
            raise EnvError("multiplier set must contain 1.0")
        if list(m) != sorted(m) or len(set(m)) != len(m):
            raise EnvError("multipliers must be strictly ascending")
        if m[0] < 0.5 or m[-1] > 2.0:
            raise EnvError("multipliers must lie within [0.5, 2.0]")
        if self.horizon < 1:
            raise EnvError("horizon must be >= 1")
        if self.lambda_stab < 0:
            raise EnvError("lambda_stab must be >= 0")
        if not 0 < self.gamma <= 1:
            raise EnvError("gamma must lie in (0, 1]")
        if self.stride < 1:
            raise EnvError("stride must be >= 1")
        if self.window[1] < self.window[0]:
            raise EnvError("window end precedes start")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = [self.window[0].isoformat(), self.window[1].isoformat()]
        d["multipliers"] = list(self.multipliers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EnvConfig":
        d = dict(d)
        d["window"] = tuple(dt.date.fromisoformat(x) if isinstance(x, str) else x for x in d["window"])
        d["multipliers"] = tuple(d.get("multipliers", DEFAULT_MULTIPLIERS))
        return cls(**d)


def action_space(config: EnvConfig) -> int:
    return len(config.multipliers)


@dataclass(frozen=True)
class ObsNormalizer:
    """Mean/std of the continuous observation features, frozen from the training window."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def from_panel(cls, panel: SalesPanel, catalog: Catalog, until: dt.date) -> "ObsNormalizer":
        end = panel.day_index(until)
        if end <= MIN_HISTORY:
            raise EnvError(f"normalization window ending {until} is shorter than the history warm-up")
        prices = panel.effective_prices(catalog.reference_price)
        q = panel.quantity.astype(float)
        ema = ema_history(q)
        days = np.arange(MIN_HISTORY, end)
        feats = _continuous(prices[days - 1], catalog.reference_price, q[days - 1], q[days - 7],
                            ema[days], days.astype(float)[:, None] * np.ones(catalog.n))
        flat = feats.reshape(-1, N_CONTINUOUS)
        std = flat.std(axis=0)
        return cls(flat.mean(axis=0), np.where(std > 1e-12, std, 1.0))

    @classmethod
    def identity(cls) -> "ObsNormalizer":
        return cls(np.zeros(N_CONTINUOUS), np.ones(N_CONTINUOUS))

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ObsNormalizer":
        return cls(np.array(d["mean"], dtype=float), np.array(d["std"], dtype=float))


def _continuous(prices, ref, lag1, lag7, ema, trend) -> np.ndarray:
    return np.stack([np.log(prices), prices / ref, np.log1p(lag1), np.log1p(lag7), np.log1p(ema),
                     np.broadcast_to(trend, np.shape(prices))], axis=-1)


@dataclass(frozen=True)
class EnvState:
    start: dt.date
    t: int
    prices: np.ndarray
    prev_prices: np.ndarray
    history: np.ndarray
    ema: np.ndarray
    noise: np.ndarray = field(repr=False)

    @property
    def day(self) -> dt.date:
        return self.start + dt.timedelta(days=self.t)


@dataclass(frozen=True)
class StepResult:
    state: EnvState
    obs: np.ndarray
    reward: float
    profits: np.ndarray
    quantities: np.ndarray
    penalty: float
    done: bool


class PricingEnv:
    def __init__(self, catalog: Catalog, panel: SalesPanel, graph: ItemGraph, oracle: DemandOracle,
                 config: EnvConfig, normalizer: ObsNormalizer | None = None):
        if not (catalog.n == graph.n == oracle.n == len(panel.skus)):
            raise EnvError("catalog, panel, graph and oracle disagree on SKU count")
        self.catalog = catalog
        self.panel = panel
        self.graph = graph
        self.oracle = oracle
        self.config = config
        self.normalizer = normalizer or ObsNormalizer.identity()
        self.ref = catalog.reference_price
        self.cost = catalog.unit_cost
        self._mult = np.array(config.multipliers)
        first_valid = panel.start + dt.timedelta(days=MIN_HISTORY)
        if config.window[0] < first_valid:
            raise EnvError(f"window starts {config.window[0]}, before the first day with full history {first_valid}")
        self._q = panel.quantity.astype(float)
        self._ema = ema_history(np.vstack([self._q, np.zeros((1, catalog.n))]))

    @property
    def n_agents(self) -> int:
        return self.catalog.n

    @property
    def n_actions(self) -> int:
        return len(self._mult)

    @property
    def max_start(self) -> dt.date:
        return self.config.window[1] - dt.timedelta(days=self.config.horizon - 1)

    def start_days(self) -> list[dt.date]:
        lo, hi = self.config.window[0], self.max_start
        if hi < lo:
            return []
        return [lo + dt.timedelta(days=k) for k in range(0, (hi - lo).days + 1, self.config.stride)]

    def draw_start(self, episode_key: object) -> dt.date:
        starts = self.start_days()
        if not starts:
            raise EnvError(f"window {self.config.window} is shorter than horizon {self.config.horizon}")
        return starts[int(rngmod.stream("start", episode_key).integers(len(starts)))]

    def reset(self, start_day: dt.date, episode_key: object) -> tuple[EnvState, np.ndarray]:
        if start_day < self.config.window[0] or start_day > self.max_start:
            raise EnvError(f"start {start_day} invalid for horizon {self.config.horizon}: "
                           f"valid starts are {self.config.window[0]}..{self.max_start}")
        s = self.panel.day_index(start_day)
        if s > self.panel.n_days:
            raise EnvError(f"start {start_day} has no panel history (panel ends {self.panel.end})")
        history = self._q[s - 7:s].copy()
        ema = self._ema[s].copy()
        noise = rngmod.stream("demand-noise", episode_key).standard_normal((self.config.horizon, self.n_agents))
        state = EnvState(start_day, 0, self.ref.copy(), self.ref.copy(), history, ema, noise)
        return state, self.observe(state)

    def observe(self, state: EnvState) -> np.ndarray:
        day = state.day
        trend = float(self.panel.day_index(day))
        cont = _continuous(state.prices, self.ref, state.history[-1], state.history[0], state.ema, trend)
        cont = (cont - self.normalizer.mean) / self.normalizer.std
        obs = np.zeros((self.n_agents, OBS_DIM))
        obs[:, :N_CONTINUOUS] = cont
        obs[:, N_CONTINUOUS + day.weekday()] = 1.0
        obs[:, N_CONTINUOUS + 7 + day.month - 1] = 1.0
        return obs

    def prices_for(self, actions: Sequence[int]) -> np.ndarray:
        a = np.asarray(actions)
        if a.shape != (self.n_agents,):
            raise EnvError(f"expected {self.n_agents} actions, got shape {a.shape}")
        if a.dtype.kind not in "iu" or a.min() < 0 or a.max() >= self.n_actions:
            raise EnvError(f"action indices must be integers in [0, {self.n_actions}); got {a.tolist()}")
        return self._mult[a] * self.ref

    def step(self, state: EnvState, actions: Sequence[int]) -> StepResult:
        if state.t >= self.config.horizon:
            raise EnvError("episode already finished")
        prices = self.prices_for(actions)
        day = state.day
        logp = np.log(prices)
        X = design_matrix(logp, prices / self.ref, neighbor_mean_log_price(self.graph, logp),
                          state.history[-1], state.history[0], state.ema,
                          day.weekday(), day.month, float(self.panel.day_index(day)))
        q = self.oracle.realize(X, state.noise[state.t])
        profits = (prices - self.cost) * q
        penalty = self.config.lambda_stab * float(np.sum(np.abs(logp - np.log(state.prices))))
        reward = float(np.sum(profits)) - penalty
        history = np.concatenate([state.history[1:], q[None, :]])
        ema = EMA_ALPHA * q + (1 - EMA_ALPHA) * state.ema
        nxt = replace(state, t=state.t + 1, prices=prices, prev_prices=state.prices, history=history, ema=ema)
        return StepResult(nxt, self.observe(nxt), reward, profits, q, penalty, nxt.t == self.config.horizon)


TRAJECTORY_HEADER = ("episode", "day", "sku", "price", "quantity", "profit")


def write_trajectory(records: Sequence[tuple], path: str | Path) -> None:
    """``records`` are tuples matching ``TRAJECTORY_HEADER``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_HEADER)
        w.writerows(records)


def load_env_config(path: str | Path) -> EnvConfig:
    with open(path) as fh:
        return EnvConfig.from_dict(json.load(fh))


@dataclass(frozen=True)
class EnvSplit:
    train: PricingEnv
    val: PricingEnv
    test: PricingEnv


def make_envs(catalog: Catalog, panel: SalesPanel, graph: ItemGraph, oracle: DemandOracle, split: dt.date,
              multipliers: Sequence[float] = DEFAULT_MULTIPLIERS, horizon: int = 19, lambda_stab: float = 0.0,
              gamma: float = 1.0, stride: int = 1, val_days: int = 14) -> EnvSplit:
    """Training, validation and test environments around a chronological split.

    Test covers ``split``..panel end; validation the ``val_days`` before the
    split; training episodes start after the history warm-up and end before
    validation. Horizons shrink to fit windows shorter than ``horizon``.
    Observation statistics come from the pre-split days only.
    """
    one = dt.timedelta(days=1)
    val_start = split - dt.timedelta(days=val_days)
    train_window = (panel.start + dt.timedelta(days=MIN_HISTORY), val_start - one)
    windows = {"train": train_window, "val": (val_start, split - one), "test": (split, panel.end)}
    norm = ObsNormalizer.from_panel(panel, catalog, split)
    envs = {}
    for name, (lo, hi) in windows.items():
        length = (hi - lo).days + 1
        if length < 1:
            raise EnvError(f"{name} window {lo}..{hi} is empty")
        cfg = EnvConfig((lo, hi), tuple(multipliers), min(horizon, length), lambda_stab, gamma, stride)
        envs[name] = PricingEnv(catalog, panel, graph, oracle, cfg, norm)
    return EnvSplit(**envs)
