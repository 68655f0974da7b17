"""A small synthetic market with known demand parameters.

Three SKUs with log-linear demand in price, a mild cross-price term and a
weekly pattern. The oracle is set by hand, so exhaustive checks against the
true model are possible. The same market can emit raw transaction lines for
pipeline tests.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .demand import EMA_ALPHA, FEATURE_NAMES, DemandOracle, design_matrix, neighbor_mean_log_price
from .graph import ItemGraph
from .ingest import Catalog, SalesPanel, Transaction

SKUS = ("S1", "S2", "S3")
REFERENCE_PRICE = np.array([2.0, 5.0, 10.0])
ELASTICITY = np.array([1.2, 3.0, 6.0])
BASE_DEMAND = np.array([40.0, 30.0, 20.0])
CROSS = 0.2
SIGMA = np.array([0.25, 0.25, 0.25])
DOW_EFFECT = np.array([0.0, 0.05, 0.05, 0.1, 0.15, 0.1, -0.2])
COST_RATIO = 0.7
START = dt.date(2011, 1, 1)
N_DAYS = 180
TEST_DAYS = 19


@dataclass(frozen=True)
class SyntheticMarket:
    catalog: Catalog
    panel: SalesPanel
    graph: ItemGraph
    oracle: DemandOracle
    split: dt.date


def complete_graph(skus=SKUS) -> ItemGraph:
    n = len(skus)
    nb = tuple(tuple(j for j in range(n) if j != i) for i in range(n))
    return ItemGraph(tuple(skus), nb, tuple(tuple(1.0 for _ in row) for row in nb), k=n - 1, tau=1.0)


def true_oracle(graph: ItemGraph | None = None) -> DemandOracle:
    """Hand-set coefficients: log1p(q) = log1p(base) - e*log(p/ref) + cross*(nbr - nbr at ref) + dow."""
    graph = graph or complete_graph()
    n = len(SKUS)
    coef = np.zeros((n, len(FEATURE_NAMES)))
    coef[:, 0] = -ELASTICITY
    coef[:, 2] = CROSS
    coef[:, 7:14] = DOW_EFFECT
    nbr_ref = neighbor_mean_log_price(graph, np.log(REFERENCE_PRICE))
    intercept = np.log1p(BASE_DEMAND) + ELASTICITY * np.log(REFERENCE_PRICE) - CROSS * nbr_ref
    return DemandOracle(SKUS, coef, intercept, SIGMA.copy())


def simulate_history(oracle: DemandOracle, graph: ItemGraph, seed: int = 0, start: dt.date = START,
                     n_days: int = N_DAYS, multipliers=(0.8, 0.9, 1.0, 1.1, 1.2)) -> tuple[np.ndarray, np.ndarray]:
    """Daily (quantity, price) history with prices drawn uniformly from ``multipliers`` x reference."""
    g = rngmod.stream("synthetic-history", seed)
    n = oracle.n
    q = np.zeros((n_days, n))
    prices = REFERENCE_PRICE * np.asarray(multipliers)[g.integers(len(multipliers), size=(n_days, n))]
    ema = np.zeros(n)
    for t in range(n_days):
        day = start + dt.timedelta(days=t)
        logp = np.log(prices[t])
        lag1 = q[t - 1] if t >= 1 else np.zeros(n)
        lag7 = q[t - 7] if t >= 7 else np.zeros(n)
        X = design_matrix(logp, prices[t] / REFERENCE_PRICE, neighbor_mean_log_price(graph, logp),
                          lag1, lag7, ema, day.weekday(), day.month, float(t))
        q[t] = oracle.realize(X, g.standard_normal(n))
        ema = q[t] if t == 0 else EMA_ALPHA * q[t] + (1 - EMA_ALPHA) * ema
    return q.astype(np.int64), prices


def synthetic_market(seed: int = 0) -> SyntheticMarket:
    graph = complete_graph()
    oracle = true_oracle(graph)
    q, prices = simulate_history(oracle, graph, seed)
    mean_price = np.where(q > 0, prices, np.nan)
    panel = SalesPanel(SKUS, START, q, mean_price, (q > 0).astype(np.int64))
    catalog = Catalog(SKUS, REFERENCE_PRICE.copy(), COST_RATIO * REFERENCE_PRICE, (START, panel.end),
                      np.count_nonzero(q, axis=0))
    split = START + dt.timedelta(days=N_DAYS - TEST_DAYS)
    return SyntheticMarket(catalog, panel, graph, oracle, split)


def synthetic_transactions(seed: int = 0, n_days: int = N_DAYS) -> list[Transaction]:
    """Transaction lines realizing the simulated daily demand.

    Each day's units are spread over a handful of invoices; many invoices
    carry several SKUs so the co-purchase graph is connected. A few
    cancelled, negative and anonymous lines are mixed in for the cleaning step.
    """
    graph = complete_graph()
    q, prices = simulate_history(true_oracle(graph), graph, seed, n_days=n_days)
    g = rngmod.stream("synthetic-lines", seed)
    rows: list[Transaction] = []
    inv = 500000
    for t in range(n_days):
        day = START + dt.timedelta(days=t)
        n_inv = 6
        invoices = [f"{inv + k}" for k in range(n_inv)]
        inv += n_inv
        for j, sku in enumerate(SKUS):
            units = int(q[t, j])
            if units == 0:
                continue
            split = np.bincount(g.integers(n_inv, size=units), minlength=n_inv)
            for k, u in enumerate(split):
                if u:
                    stamp = dt.datetime.combine(day, dt.time(9 + k, 0))
                    rows.append(Transaction(invoices[k], sku, int(u), round(float(prices[t, j]), 2), stamp,
                                            f"{12000 + (t * 7 + k) % 97}", "United Kingdom"))
        if t % 30 == 5:
            stamp = dt.datetime.combine(day, dt.time(18, 0))
            rows.append(Transaction(f"C{inv}", SKUS[0], -2, float(REFERENCE_PRICE[0]), stamp, "12001", "United Kingdom"))
            rows.append(Transaction(f"{inv + 1}", SKUS[1], -1, float(REFERENCE_PRICE[1]), stamp, "12002", "United Kingdom"))
            rows.append(Transaction(f"{inv + 2}", SKUS[2], 1, float(REFERENCE_PRICE[2]), stamp, None, "United Kingdom"))
            inv += 3
    return rows


def elasticity_fixture(elasticity: float = -1.5, n_days: int = 120, base: float = 200.0,
                       seed: int = 0) -> SyntheticMarket:
    """Two SKUs with noise-free constant-elasticity demand and prices drawn uniformly in [0.8, 1.2] x reference.

    Quantities are rounded to whole units, the only departure from the exact model.
    """
    g = rngmod.stream("elasticity-fixture", seed)
    skus = ("E1", "E2")
    ref = np.array([4.0, 8.0])
    prices = ref * g.uniform(0.8, 1.2, size=(n_days, 2))
    q = np.rint(base * (prices / ref) ** elasticity).astype(np.int64)
    panel = SalesPanel(skus, START, q, prices.copy(), np.ones_like(q))
    catalog = Catalog(skus, ref, COST_RATIO * ref, (START, panel.end), np.full(2, n_days))
    split = START + dt.timedelta(days=n_days - 20)
    return SyntheticMarket(catalog, panel, complete_graph(skus), None, split)
