"""Per-SKU stochastic demand oracle.

The reference model is ridge regression on ``log1p(quantity)`` with own price,
relative price, mean neighbor log price, demand lags, an EMA, calendar
one-hots and a linear trend. Noise is Gaussian in log1p space.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .graph import ItemGraph
from .ingest import Catalog, SalesPanel

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
EMA_SPAN = 7
EMA_ALPHA = 2.0 / (EMA_SPAN + 1)
MIN_HISTORY = 7
MIN_TRAIN_DAYS = 30
MIN_SKU_OBS = 10

FEATURE_NAMES: tuple[str, ...] = (
    ("log_price", "price_ratio", "nbr_log_price", "log1p_lag1", "log1p_lag7", "log1p_ema7", "trend")
    + tuple(f"dow_{d}" for d in range(7))
    + tuple(f"month_{m}" for m in range(1, 13))
)
N_FEATURES = len(FEATURE_NAMES)
OWN_PRICE_COLS = (0, 1)


class DemandError(ValueError):
    pass


@dataclass(frozen=True)
class DemandFeatures:
    """Raw feature values for one SKU on one day. Demand history is in units."""

    sku: int
    log_price: float
    price_ratio: float
    nbr_log_price: float
    lag1: float
    lag7: float
    ema7: float
    dow: int
    month: int
    trend: float

    def vector(self) -> np.ndarray:
        return design_matrix(
            np.array(self.log_price), np.array(self.price_ratio), np.array(self.nbr_log_price),
            np.array(self.lag1), np.array(self.lag7), np.array(self.ema7),
            self.dow, self.month, self.trend,
        )


def design_matrix(log_price, price_ratio, nbr_log_price, lag1, lag7, ema7, dow, month, trend) -> np.ndarray:
    """Stack raw features into model rows. Array arguments broadcast; output adds a trailing feature axis."""
    log_price = np.asarray(log_price, dtype=float)
    shape = np.broadcast_shapes(log_price.shape, np.shape(price_ratio), np.shape(nbr_log_price),
                                np.shape(lag1), np.shape(lag7), np.shape(ema7), np.shape(trend))
    out = np.zeros(shape + (N_FEATURES,))
    out[..., 0] = log_price
    out[..., 1] = price_ratio
    out[..., 2] = nbr_log_price
    out[..., 3] = np.log1p(lag1)
    out[..., 4] = np.log1p(lag7)
    out[..., 5] = np.log1p(ema7)
    out[..., 6] = trend
    dow = np.broadcast_to(np.asarray(dow), shape)
    month = np.broadcast_to(np.asarray(month), shape)
    np.put_along_axis(out, (7 + dow)[..., None], 1.0, axis=-1)
    np.put_along_axis(out, (13 + month)[..., None], 1.0, axis=-1)
    return out


def neighbor_mean_log_price(graph: ItemGraph, log_prices: np.ndarray) -> np.ndarray:
    """Mean log price over N(i), along the last axis. Isolated nodes use their own price."""
    log_prices = np.asarray(log_prices, dtype=float)
    out = log_prices.copy()
    for i, nb in enumerate(graph.neighbors):
        if nb:
            out[..., i] = log_prices[..., list(nb)].mean(axis=-1)
    return out


def ema_history(quantity: np.ndarray) -> np.ndarray:
    """EMA of demand through the previous day: row t summarizes rows 0..t-1 (row 0 is zero)."""
    q = np.asarray(quantity, dtype=float)
    out = np.zeros_like(q)
    if q.shape[0] > 1:
        out[1] = q[0]
        for t in range(2, q.shape[0]):
            out[t] = EMA_ALPHA * q[t - 1] + (1 - EMA_ALPHA) * out[t - 1]
    return out


def featurize(panel: SalesPanel, graph: ItemGraph, catalog: Catalog, sku: int, day: dt.date,
              prices: np.ndarray) -> DemandFeatures:
    """Features for ``sku`` on ``day`` under the price vector ``prices``; history comes from the panel."""
    t = panel.day_index(day)
    if t < MIN_HISTORY or t >= panel.n_days:
        earliest = panel.start + dt.timedelta(days=MIN_HISTORY)
        raise DemandError(f"{day} lacks {MIN_HISTORY} days of history inside the panel; "
                          f"earliest valid day is {earliest}, last is {panel.end}")
    q = panel.quantity[:, sku].astype(float)
    logp = np.log(np.asarray(prices, dtype=float))
    return DemandFeatures(
        sku=sku,
        log_price=float(logp[sku]),
        price_ratio=float(prices[sku] / catalog.reference_price[sku]),
        nbr_log_price=float(neighbor_mean_log_price(graph, logp)[sku]),
        lag1=float(q[t - 1]),
        lag7=float(q[t - 7]),
        ema7=float(ema_history(q[: t + 1])[t]),
        dow=day.weekday(),
        month=day.month,
        trend=float(t),
    )


def panel_design(panel: SalesPanel, graph: ItemGraph, catalog: Catalog) -> np.ndarray:
    """Model rows for every (day, sku) using observed prices; shape (days, n, F).

    Rows before ``MIN_HISTORY`` are filled but not valid for fitting.
    """
    prices = panel.effective_prices(catalog.reference_price)
    logp = np.log(prices)
    q = panel.quantity.astype(float)
    lag1 = np.zeros_like(q)
    lag1[1:] = q[:-1]
    lag7 = np.zeros_like(q)
    lag7[7:] = q[:-7]
    dates = panel.dates()
    dow = np.array([d.weekday() for d in dates])[:, None]
    month = np.array([d.month for d in dates])[:, None]
    trend = np.arange(panel.n_days, dtype=float)[:, None]
    return design_matrix(logp, prices / catalog.reference_price, neighbor_mean_log_price(graph, logp),
                         lag1, lag7, ema_history(q), dow, month, trend)


@dataclass(frozen=True)
class RidgeFit:
    coef: np.ndarray
    intercept: float


def fit_ridge(X: np.ndarray, y: np.ndarray, penalty: float = 1.0) -> RidgeFit:
    """Ridge on standardized columns with an unpenalized intercept; coefficients returned in raw units."""
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 1e-12, std, 1.0)
    Z = (X - mean) / std
    ybar = y.mean()
    A = Z.T @ Z + penalty * np.eye(X.shape[1])
    beta = np.linalg.lstsq(A, Z.T @ (y - ybar), rcond=None)[0]
    coef = beta / std
    return RidgeFit(coef, float(ybar - mean @ coef))


@dataclass(frozen=True)
class DemandOracle:
    skus: tuple[str, ...]
    coef: np.ndarray
    intercept: np.ndarray
    sigma: np.ndarray
    pooled: np.ndarray = field(default=None)
    feature_names: tuple[str, ...] = FEATURE_NAMES
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.pooled is None:
            object.__setattr__(self, "pooled", np.zeros(len(self.skus), dtype=bool))
        if self.coef.shape != (len(self.skus), len(self.feature_names)):
            raise DemandError(f"coefficient shape {self.coef.shape} does not match schema")

    @property
    def n(self) -> int:
        return len(self.skus)

    def _check(self, sku: int) -> None:
        if not 0 <= sku < self.n:
            raise DemandError(f"no fitted model for SKU index {sku}")

    def mean_log1p(self, X: np.ndarray) -> np.ndarray:
        """Linear response for rows X of shape (..., n, F), one row per SKU."""
        return np.einsum("...nf,nf->...n", X, self.coef) + self.intercept

    def expected(self, X: np.ndarray) -> np.ndarray:
        return np.maximum(np.expm1(self.mean_log1p(X)), 0.0)

    def realize(self, X: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Integer quantities given standard-normal draws ``z`` shaped like the SKU axis."""
        return np.maximum(np.rint(np.expm1(self.mean_log1p(X) + self.sigma * z)), 0.0)

    def own_price_elasticity(self, sku: int, price_ratio: float = 1.0) -> float:
        """d log1p(q) / d log p at the given price ratio."""
        self._check(sku)
        return float(self.coef[sku, 0] + self.coef[sku, 1] * price_ratio)


def predict(oracle: DemandOracle, features: DemandFeatures) -> float:
    oracle._check(features.sku)
    x = features.vector()
    mu = oracle.intercept[features.sku] + x @ oracle.coef[features.sku]
    return float(max(np.expm1(mu), 0.0))


def sample(oracle: DemandOracle, features: DemandFeatures, rng: np.random.Generator) -> int:
    oracle._check(features.sku)
    x = features.vector()
    mu = oracle.intercept[features.sku] + x @ oracle.coef[features.sku]
    z = rng.standard_normal()
    return int(max(np.rint(np.expm1(mu + oracle.sigma[features.sku] * z)), 0.0))


@dataclass
class FitDiagnostics:
    """Held-out metrics. MAPE variants are on the log1p scale, in percent."""

    test_start: dt.date
    test_end: dt.date
    rows: list[dict] = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)


def _metrics(y: np.ndarray, yhat_log: np.ndarray) -> dict:
    ylog = np.log1p(y)
    yhat = np.maximum(np.expm1(yhat_log), 0.0)
    ss_res = float(np.sum((ylog - yhat_log) ** 2))
    ss_tot = float(np.sum((ylog - ylog.mean()) ** 2))
    pos = ylog > 0
    ape = np.abs(ylog[pos] - yhat_log[pos]) / ylog[pos]
    err = y - yhat
    w = y
    return {
        "r2_log1p": 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else float("-inf")),
        "rmse": float(np.sqrt(np.mean(err ** 2))),
        "mape": float(100 * ape.mean()) if pos.any() else 0.0,
        "weighted_rmse": float(np.sqrt(np.sum(w * err ** 2) / w.sum())) if w.sum() > 0 else 0.0,
        "weighted_mape": float(100 * np.sum(np.abs(ylog - yhat_log)) / ylog.sum()) if ylog.sum() > 0 else 0.0,
        "n_obs": int(y.size),
    }


def fit(panel: SalesPanel, graph: ItemGraph, catalog: Catalog, split: dt.date,
        penalty: float = 1.0) -> tuple[DemandOracle, FitDiagnostics]:
    """Fit one ridge model per SKU on days before ``split``; score days from ``split`` on."""
    s = panel.day_index(split)
    if not 0 < s < panel.n_days:
        raise DemandError(f"split {split} outside panel window {panel.start}..{panel.end}")
    if s - MIN_HISTORY < MIN_TRAIN_DAYS:
        raise DemandError(f"need at least {MIN_TRAIN_DAYS} training days after the {MIN_HISTORY}-day warm-up; "
                          f"split {split} leaves {s - MIN_HISTORY}")
    X = panel_design(panel, graph, catalog)
    y = panel.quantity.astype(float)
    tr = slice(MIN_HISTORY, s)
    te = slice(s, panel.n_days)
    n = panel.quantity.shape[1]

    sparse_skus = [j for j in range(n) if np.count_nonzero(y[tr, j]) < MIN_SKU_OBS]
    pooled_fit = None
    if sparse_skus:
        pooled_fit = fit_ridge(X[tr].reshape(-1, N_FEATURES), np.log1p(y[tr]).reshape(-1), penalty)
        logger.warning("pooled demand model used for %d sparse SKU(s)", len(sparse_skus))

    coef = np.zeros((n, N_FEATURES))
    intercept = np.zeros(n)
    sigma = np.zeros(n)
    pooled = np.zeros(n, dtype=bool)
    for j in range(n):
        ylog = np.log1p(y[tr, j])
        f = pooled_fit if j in sparse_skus else fit_ridge(X[tr, j], ylog, penalty)
        pooled[j] = j in sparse_skus
        coef[j], intercept[j] = f.coef, f.intercept
        sigma[j] = float(np.std(ylog - (X[tr, j] @ f.coef + f.intercept)))
    oracle = DemandOracle(tuple(panel.skus), coef, intercept, sigma, pooled)

    pred = oracle.mean_log1p(X[te])
    diag = FitDiagnostics(split, panel.end)
    for j in range(n):
        diag.rows.append({"sku": panel.skus[j], "pooled": bool(pooled[j]), "sigma": float(sigma[j]),
                          **_metrics(y[te, j], pred[:, j])})
    diag.aggregate = {"sku": "ALL", "pooled": bool(pooled.any()), "sigma": float(sigma.mean()),
                      **_metrics(y[te].reshape(-1), pred.reshape(-1))}
    return oracle, diag


# -- serialization -----------------------------------------------------------

def oracle_to_dict(oracle: DemandOracle) -> dict:
    return {
        "schema_version": oracle.schema_version,
        "feature_names": list(oracle.feature_names),
        "skus": {
            s: {"intercept": float(oracle.intercept[j]), "coef": [float(c) for c in oracle.coef[j]],
                "sigma": float(oracle.sigma[j]), "pooled": bool(oracle.pooled[j])}
            for j, s in enumerate(oracle.skus)
        },
    }


def oracle_from_dict(d: dict) -> DemandOracle:
    if d.get("schema_version") != SCHEMA_VERSION or tuple(d["feature_names"]) != FEATURE_NAMES:
        raise DemandError(f"incompatible oracle schema version {d.get('schema_version')}")
    skus = tuple(d["skus"])
    recs = [d["skus"][s] for s in skus]
    return DemandOracle(
        skus,
        np.array([r["coef"] for r in recs], dtype=float),
        np.array([r["intercept"] for r in recs], dtype=float),
        np.array([r["sigma"] for r in recs], dtype=float),
        np.array([r["pooled"] for r in recs], dtype=bool),
    )


def save_oracle(oracle: DemandOracle, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(oracle_to_dict(oracle), fh, indent=1)
        fh.write("\n")


def load_oracle(path: str | Path) -> DemandOracle:
    with open(path) as fh:
        return oracle_from_dict(json.load(fh))


DIAG_HEADER = ("sku", "pooled", "sigma", "r2_log1p", "rmse", "mape", "weighted_rmse", "weighted_mape", "n_obs")


def write_diagnostics(diag: FitDiagnostics, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=DIAG_HEADER + ("test_start", "test_end"), lineterminator="\n")
        w.writeheader()
        for rec in diag.rows + [diag.aggregate]:
            w.writerow({**rec, "test_start": diag.test_start.isoformat(), "test_end": diag.test_end.isoformat()})
