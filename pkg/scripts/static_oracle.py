"""Exhaustive static-price oracle on the synthetic market: every joint multiplier assignment, CRN test keys.

    python3 scripts/static_oracle.py [--episodes 20] [--top 5]
"""

import argparse
import itertools

import numpy as np

from retail_marl.env import make_envs
from retail_marl.eval import StaticPolicy, evaluate
from retail_marl.synthetic import synthetic_market


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--episodes", type=int, default=20)
    ap.add_argument("--top", type=int, default=5)
    args = ap.parse_args()
    m = synthetic_market(0)
    env = make_envs(m.catalog, m.panel, m.graph, m.oracle, m.split).test
    mult = env.config.multipliers
    scores = []
    for combo in itertools.product(range(env.n_actions), repeat=env.n_agents):
        profit = np.mean([r.profit for r in evaluate(StaticPolicy(combo), env, args.episodes, 0)])
        scores.append((float(profit), tuple(mult[a] for a in combo)))
    scores.sort(reverse=True)
    for profit, combo in scores[:args.top]:
        print(f"{profit:10.2f}  multipliers {combo}")


if __name__ == "__main__":
    main()
