"""Stability-penalty sweep on the synthetic market: train MAPPO per (lambda, seed), evaluate on shared CRN keys.

    python3 scripts/lambda_frontier.py [--grid 0,0.5,2] [--seeds 0,1,2] [--steps 20000] [--out frontier.csv]
"""

import argparse
from pathlib import Path

from retail_marl.env import make_envs
from retail_marl.eval import lambda_sweep, write_frontier
from retail_marl.marl import TrainConfig, train
from retail_marl.synthetic import synthetic_market


def floats(text):
    return [float(x) for x in text.split(",")]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--grid", type=floats, default=[0.0, 0.5, 2.0])
    ap.add_argument("--seeds", type=lambda t: [int(x) for x in t.split(",")], default=[0, 1, 2])
    ap.add_argument("--steps", type=int, default=20_000)
    ap.add_argument("--episodes", type=int, default=20)
    ap.add_argument("--arch", default="mappo", choices=["mappo", "mappo-gat"])
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()
    m = synthetic_market(0)
    envs = {lam: make_envs(m.catalog, m.panel, m.graph, m.oracle, m.split, lambda_stab=lam) for lam in args.grid}

    def trained(lam):
        return {s: train(TrainConfig(lr=0.03, rollout_steps=64, n_envs=8, minibatch_size=96, total_steps=args.steps,
                                     val_every=2, seed=s), envs[lam].train, envs[lam].val, args.arch).best_model()
                for s in args.seeds}

    rows = lambda_sweep(args.grid, trained, lambda lam: envs[lam].test, args.episodes, args.seeds)
    for r in rows:
        print(f"lambda={r.lambda_stab:<5} profit={r.mean_profit:10.2f} stability={r.mean_stability:6.3f}% "
              f"jain={r.mean_jain:.4f} {r.error}")
    if args.out:
        write_frontier(rows, args.out)


if __name__ == "__main__":
    main()
