"""CRN-paired evaluation: episode runs, fairness/stability metrics, paired statistics, lambda sweep."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import rng as rngmod
from .env import PricingEnv

logger = logging.getLogger(__name__)

N_BOOT = 10_000


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class EpisodeResult:
    seed: int
    episode: int
    method: str
    profit: float
    sku_profit: tuple[float, ...]
    stability: float
    jain: float
    start: str = ""


def jain_index(values: Sequence[float], return_flag: bool = False):
    """(sum x)^2 / (n * sum x^2) over nonnegative allocations; negatives are clipped to 0.

    An all-zero vector is defined as perfectly equal (1.0); ``return_flag``
    additionally returns whether that convention was used.
    """
    x = np.clip(np.asarray(values, dtype=float), 0.0, None)
    if x.size == 0:
        raise EvalError("jain_index needs at least one value")
    sq = float(np.sum(x * x))
    if sq == 0.0:
        return (1.0, True) if return_flag else 1.0
    j = float(np.sum(x)) ** 2 / (x.size * sq)
    return (j, False) if return_flag else j


def stability_metric(prices: np.ndarray) -> float:
    """Mean absolute percentage price change between consecutive rows of a (steps, n) trajectory."""
    p = np.asarray(prices, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    if p.shape[0] < 2:
        raise EvalError("stability needs a trajectory of at least two steps")
    return float(np.mean((100.0 * np.abs(p[1:] - p[:-1])) / p[:-1]))


def episode_key(namespace: str, seed: int, episode: int) -> tuple:
    return ("crn", namespace, seed, episode)


class StaticPolicy:
    """Fixed action index per agent, every step."""

    def __init__(self, actions: Sequence[int]):
        self.actions = np.asarray(actions, dtype=np.int64)

    def greedy(self, obs: np.ndarray, time_left: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.actions, obs.shape[:2]).copy()


class GreedyActorCritic:
    def __init__(self, ac):
        self.ac = ac

    def greedy(self, obs: np.ndarray, time_left: np.ndarray) -> np.ndarray:
        sample, _ = self.ac.act(obs, time_left, greedy=True)
        return sample.action


def _as_policy(policy):
    if hasattr(policy, "greedy"):
        return policy
    return GreedyActorCritic(policy)


def run_episodes(policy, env: PricingEnv, keys: Sequence[object]) -> list[dict]:
    """Run one greedy episode per key in lockstep. Returns per-episode profit records."""
    policy = _as_policy(policy)
    H = env.config.horizon
    starts = [env.draw_start(k) for k in keys]
    pairs = [env.reset(s, k) for s, k in zip(starts, keys)]
    states = [p[0] for p in pairs]
    obs = np.stack([p[1] for p in pairs])
    E, n = len(keys), env.n_agents
    prices = np.zeros((E, H, n))
    sku_profit = np.zeros((E, n))
    for t in range(H):
        acts = policy.greedy(obs, np.full(E, (H - t) / H))
        nxt = []
        for e in range(E):
            res = env.step(states[e], acts[e])
            states[e] = res.state
            prices[e, t] = res.state.prices
            sku_profit[e] += res.profits
            nxt.append(res.obs)
        obs = np.stack(nxt)
    return [{"start": starts[e].isoformat(), "prices": prices[e], "sku_profit": sku_profit[e]} for e in range(E)]


def evaluate(policy, env: PricingEnv, episodes: int, seed: int, namespace: str = "test",
             method: str = "policy") -> list[EpisodeResult]:
    """Greedy evaluation on CRN keys (namespace, seed, e) for e in range(episodes).

    Profit excludes the stability penalty so numbers compare across penalty weights.
    """
    if episodes < 1:
        raise EvalError("episodes must be >= 1")
    keys = [episode_key(namespace, seed, e) for e in range(episodes)]
    out = []
    for e, rec in enumerate(run_episodes(policy, env, keys)):
        sp = rec["sku_profit"]
        stab = stability_metric(rec["prices"]) if env.config.horizon >= 2 else 0.0
        out.append(EpisodeResult(seed, e, method, float(sp.sum()), tuple(float(x) for x in sp), stab,
                                 jain_index(sp), rec["start"]))
    return out


@dataclass
class SeedSummary:
    seed: int
    mean_a: float
    mean_b: float
    median_a: float
    median_b: float
    diff: float
    jain_a: float
    jain_b: float
    stability_a: float
    stability_b: float


@dataclass
class EvalReport:
    """Paired comparison of method B against method A (differences are B - A)."""

    method_a: str
    method_b: str
    seeds: list[SeedSummary]
    episode_diffs: list[float]
    wins: int
    losses: int
    ties: int
    mean_diff: float
    ci_low: float
    ci_high: float
    mean_ci_a: tuple[float, float, float] = (0.0, 0.0, 0.0)
    mean_ci_b: tuple[float, float, float] = (0.0, 0.0, 0.0)
    extra: dict = field(default_factory=dict)

    @property
    def seed_diffs(self) -> np.ndarray:
        return np.array([s.diff for s in self.seeds])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["win_rate"] = f"{self.wins}/{len(self.seeds)}"
        return d


def _index(results: Iterable[EpisodeResult]) -> dict[tuple[int, int], EpisodeResult]:
    out: dict[tuple[int, int], EpisodeResult] = {}
    for r in results:
        k = (r.seed, r.episode)
        if k in out:
            raise EvalError(f"duplicate result for seed {r.seed}, episode {r.episode}")
        out[k] = r
    return out


def bootstrap_mean_ci(values: np.ndarray, n_boot: int = N_BOOT, key: object = "paired-bootstrap",
                      level: float = 0.95) -> tuple[float, float]:
    values = np.asarray(values, dtype=float)
    g = rngmod.stream("bootstrap", key)
    idx = g.integers(0, len(values), size=(n_boot, len(values)))
    means = values[idx].mean(axis=1)
    tail = 100 * (1 - level) / 2
    lo, hi = np.percentile(means, [tail, 100 - tail])
    return float(lo), float(hi)


def paired_stats(results_a: Sequence[EpisodeResult], results_b: Sequence[EpisodeResult],
                 n_boot: int = N_BOOT, key: object = "paired-bootstrap") -> EvalReport:
    ia, ib = _index(results_a), _index(results_b)
    if set(ia) != set(ib):
        only_a = sorted(set(ia) - set(ib))
        only_b = sorted(set(ib) - set(ia))
        raise EvalError(f"unpaired results: missing from B {only_a[:10]}, missing from A {only_b[:10]}")
    if not ia:
        raise EvalError("no results to compare")
    method_a = next(iter(ia.values())).method
    method_b = next(iter(ib.values())).method
    seeds = sorted({s for s, _ in ia})
    summaries = []
    episode_diffs = []
    for s in seeds:
        eps = sorted(e for ss, e in ia if ss == s)
        pa = np.array([ia[(s, e)].profit for e in eps])
        pb = np.array([ib[(s, e)].profit for e in eps])
        episode_diffs.extend((pb - pa).tolist())
        summaries.append(SeedSummary(
            s, float(pa.mean()), float(pb.mean()), float(np.median(pa)), float(np.median(pb)),
            float(np.mean(pb - pa)),
            float(np.mean([ia[(s, e)].jain for e in eps])), float(np.mean([ib[(s, e)].jain for e in eps])),
            float(np.mean([ia[(s, e)].stability for e in eps])), float(np.mean([ib[(s, e)].stability for e in eps])),
        ))
    diffs = np.array([x.diff for x in summaries])
    lo, hi = bootstrap_mean_ci(diffs, n_boot, key)
    ma = np.array([x.mean_a for x in summaries])
    mb = np.array([x.mean_b for x in summaries])
    return EvalReport(
        method_a, method_b, summaries, episode_diffs,
        wins=int(np.sum(diffs > 0)), losses=int(np.sum(diffs < 0)), ties=int(np.sum(diffs == 0)),
        mean_diff=float(diffs.mean()), ci_low=lo, ci_high=hi,
        mean_ci_a=(float(ma.mean()), *bootstrap_mean_ci(ma, n_boot, (key, "a"))),
        mean_ci_b=(float(mb.mean()), *bootstrap_mean_ci(mb, n_boot, (key, "b"))),
    )


@dataclass
class FrontierRow:
    lambda_stab: float
    mean_profit: float
    mean_stability: float
    mean_jain: float
    episodes: int
    error: str = ""


def lambda_sweep(grid: Sequence[float], train_or_load: Callable[[float], object],
                 env_for: Callable[[float], PricingEnv], episodes: int, seeds: Sequence[int] = (0,),
                 namespace: str = "test") -> list[FrontierRow]:
    """Train (or load) one policy per penalty weight and evaluate all on shared CRN keys.

    ``train_or_load(lam)`` may return a single policy or a ``{seed: policy}`` mapping.
    A failure at one weight is recorded in that row and the sweep continues.
    """
    if not grid:
        raise EvalError("lambda grid is empty")
    if any(l < 0 for l in grid):
        raise EvalError("lambda values must be >= 0")
    rows = []
    for lam in grid:
        try:
            policies = train_or_load(lam)
            if not isinstance(policies, dict):
                policies = {s: policies for s in seeds}
            env = env_for(lam)
            res = [r for s in seeds for r in evaluate(policies[s], env, episodes, s, namespace, f"lambda={lam}")]
            rows.append(FrontierRow(float(lam), float(np.mean([r.profit for r in res])),
                                    float(np.mean([r.stability for r in res])),
                                    float(np.mean([r.jain for r in res])), len(res)))
        except Exception as exc:  # noqa: BLE001 - reported per row
            logger.exception("lambda sweep failed at %s", lam)
            rows.append(FrontierRow(float(lam), float("nan"), float("nan"), float("nan"), 0, repr(exc)))
    return rows


# -- output ------------------------------------------------------------------

EPISODE_HEADER = ("seed", "episode", "method", "start", "profit", "stability", "jain", "sku_profit")


def write_episodes(results: Sequence[EpisodeResult], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EPISODE_HEADER)
        for r in results:
            w.writerow([r.seed, r.episode, r.method, r.start, repr(r.profit), repr(r.stability), repr(r.jain),
                        " ".join(repr(x) for x in r.sku_profit)])


def read_episodes(path: str | Path) -> list[EpisodeResult]:
    with open(path, newline="") as fh:
        return [EpisodeResult(int(r["seed"]), int(r["episode"]), r["method"], float(r["profit"]),
                              tuple(float(x) for x in r["sku_profit"].split()), float(r["stability"]),
                              float(r["jain"]), r["start"]) for r in csv.DictReader(fh)]


def write_frontier(rows: Sequence[FrontierRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(FrontierRow.__dataclass_fields__), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(asdict(r))


def write_report(report: EvalReport, csv_path: str | Path, json_path: str | Path) -> None:
    with open(csv_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(SeedSummary.__dataclass_fields__), lineterminator="\n")
        w.writeheader()
        for s in report.seeds:
            w.writerow(asdict(s))
    summary = report.to_dict()
    summary.pop("seeds")
    summary.pop("episode_diffs")
    with open(json_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_figure_data(report: EvalReport, out_dir: str | Path, bins: int = 20) -> list[Path]:
    """Plot-ready CSVs: mean +/- CI, paired-difference histogram, per-seed difference,
    win/loss/tie counts, fairness deltas and stability deltas."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    a, b = report.method_a, report.method_b
    paths = [out / f for f in ("fig1_mean_profit_ci.csv", "fig2_paired_diff_hist.csv", "fig3_per_seed_diff.csv",
                               "fig4_win_loss_tie.csv", "fig5_jain_delta.csv", "fig6_stability_delta.csv")]
    _write_rows(paths[0], ("method", "mean", "ci_low", "ci_high"),
                [(a, *report.mean_ci_a), (b, *report.mean_ci_b)])
    diffs = np.asarray(report.episode_diffs)
    lo, hi = (float(diffs.min()), float(diffs.max())) if diffs.size else (0.0, 0.0)
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(diffs, bins=bins, range=(lo, hi))
    _write_rows(paths[1], ("bin_left", "bin_right", "count"),
                [(float(edges[i]), float(edges[i + 1]), int(c)) for i, c in enumerate(counts)])
    _write_rows(paths[2], ("seed", "diff", "mean_diff"), [(s.seed, s.diff, report.mean_diff) for s in report.seeds])
    _write_rows(paths[3], ("outcome", "count"), [("win", report.wins), ("loss", report.losses), ("tie", report.ties)])
    _write_rows(paths[4], ("seed", f"jain_{a}", f"jain_{b}", "delta"),
                [(s.seed, s.jain_a, s.jain_b, s.jain_b - s.jain_a) for s in report.seeds])
    _write_rows(paths[5], ("seed", f"stability_{a}", f"stability_{b}", "delta"),
                [(s.seed, s.stability_a, s.stability_b, s.stability_b - s.stability_a) for s in report.seeds])
    return paths
