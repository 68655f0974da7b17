"""Transaction loading, cleaning and trimming.

Input layout is the Online Retail II CSV export (columns Invoice, StockCode,
Description, Quantity, InvoiceDate, Price, Customer ID, Country).
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("Invoice", "StockCode", "Quantity", "InvoiceDate", "Price", "Customer ID")
CANCEL_PREFIX = "C"
DEFAULT_COST_RATIO = 0.7


class IngestError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class Transaction:
    invoice_id: str
    sku: str
    quantity: int
    unit_price: float
    timestamp: dt.datetime
    customer_id: str | None
    country: str


@dataclass(frozen=True, slots=True)
class Reject:
    row: int
    reason: str
    raw: str


@dataclass(frozen=True)
class Catalog:
    skus: tuple[str, ...]
    reference_price: np.ndarray
    unit_cost: np.ndarray
    window: tuple[dt.date, dt.date]
    activity: np.ndarray

    def __post_init__(self):
        if len(set(self.skus)) != len(self.skus):
            raise IngestError("duplicate SKU ids in catalog")
        if not np.all((self.unit_cost > 0) & (self.unit_cost < self.reference_price)):
            raise IngestError("unit cost must satisfy 0 < c < reference price for every SKU")

    @property
    def n(self) -> int:
        return len(self.skus)

    def index(self, sku: str) -> int:
        return self.skus.index(sku)


@dataclass(frozen=True)
class SalesPanel:
    """Daily per-SKU aggregates over a contiguous calendar window.

    Arrays are indexed ``[day, sku]``. ``mean_price`` is NaN on days without
    sales.
    """

    skus: tuple[str, ...]
    start: dt.date
    quantity: np.ndarray
    mean_price: np.ndarray
    invoice_count: np.ndarray

    @property
    def n_days(self) -> int:
        return self.quantity.shape[0]

    @property
    def end(self) -> dt.date:
        return self.start + dt.timedelta(days=self.n_days - 1)

    def dates(self) -> list[dt.date]:
        return [self.start + dt.timedelta(days=d) for d in range(self.n_days)]

    def day_index(self, day: dt.date) -> int:
        return (day - self.start).days

    def effective_prices(self, reference_price: np.ndarray) -> np.ndarray:
        """Observed prices with gaps carried forward; leading gaps use the reference."""
        out = np.empty_like(self.mean_price)
        last = np.asarray(reference_price, dtype=float).copy()
        for d in range(self.n_days):
            row = self.mean_price[d]
            seen = ~np.isnan(row)
            last = np.where(seen, row, last)
            out[d] = last
        return out


def _parse_customer(value: str) -> str | None:
    value = value.strip()
    if not value or value.lower() == "nan":
        return None
    if value.endswith(".0"):
        value = value[:-2]
    return value


def load_transactions(path: str | Path) -> tuple[list[Transaction], list[Reject]]:
    """Parse a transaction CSV. Malformed rows go to the rejects list with a reason code.

    Row indices in errors and rejects are 0-based data rows (header excluded).
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"transaction file not found: {path}")
    df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding_errors="replace")
    missing = [c for c in REQUIRED_COLUMNS if c not in df.columns]
    if missing:
        raise IngestError(f"{path}: missing required column(s): {', '.join(missing)}")

    raw_dates = df["InvoiceDate"].str.strip()
    stamps = pd.to_datetime(raw_dates, errors="coerce", format="%Y-%m-%d %H:%M:%S")
    retry = stamps.isna()
    if retry.any():
        stamps[retry] = pd.to_datetime(raw_dates[retry], errors="coerce", format="mixed")
    bad = np.flatnonzero(stamps.isna().to_numpy())
    if bad.size:
        i = int(bad[0])
        raise IngestError(f"{path}: unparseable InvoiceDate {raw_dates.iloc[i]!r} at row {i}")

    qty = pd.to_numeric(df["Quantity"].str.strip(), errors="coerce")
    price = pd.to_numeric(df["Price"].str.strip(), errors="coerce")
    country = df["Country"] if "Country" in df.columns else pd.Series([""] * len(df))

    invoices = df["Invoice"].str.strip().tolist()
    skus = df["StockCode"].str.strip().tolist()
    customers = df["Customer ID"].tolist()
    qty_v = qty.to_numpy()
    price_v = price.to_numpy()
    stamp_v = stamps.to_numpy().astype("datetime64[us]").astype(object)
    country_v = country.str.strip().tolist()

    rows: list[Transaction] = []
    rejects: list[Reject] = []
    for i in range(len(df)):
        q, p = qty_v[i], price_v[i]
        if not invoices[i] or not skus[i]:
            reason = "missing_id"
        elif np.isnan(q) or q != np.floor(q):
            reason = "bad_quantity"
        elif np.isnan(p):
            reason = "bad_price"
        else:
            cust = _parse_customer(customers[i])
            if cust is None:
                reason = "missing_customer_id"
            else:
                rows.append(Transaction(invoices[i], skus[i], int(q), float(p),
                                        stamp_v[i], cust, country_v[i]))
                continue
        rejects.append(Reject(i, reason, f"{invoices[i]},{skus[i]},{df['Quantity'].iat[i]},{df['Price'].iat[i]}"))
    logger.info("loaded %d rows from %s (%d rejected)", len(rows), path, len(rejects))
    return rows, rejects


def clean(rows: Iterable[Transaction]) -> list[Transaction]:
    return [
        r for r in rows
        if not r.invoice_id.startswith(CANCEL_PREFIX)
        and r.quantity > 0
        and r.unit_price > 0
        and r.customer_id
    ]


def in_window(rows: Iterable[Transaction], window: tuple[dt.date, dt.date]) -> list[Transaction]:
    lo, hi = window
    return [r for r in rows if lo <= r.timestamp.date() <= hi]


def select(rows: Iterable[Transaction], catalog: Catalog) -> list[Transaction]:
    """Rows inside the catalog window whose SKU is in the catalog."""
    keep = set(catalog.skus)
    return [r for r in in_window(rows, catalog.window) if r.sku in keep]


def rank_skus(rows: Sequence[Transaction]) -> list[tuple[str, int]]:
    """SKUs by line count, descending, ties by SKU id ascending."""
    counts: dict[str, int] = {}
    for r in rows:
        counts[r.sku] = counts.get(r.sku, 0) + 1
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))


def trim(
    rows: Sequence[Transaction],
    window: tuple[dt.date, dt.date],
    top_n: int,
    cost_ratio: float = DEFAULT_COST_RATIO,
    reference_until: dt.date | None = None,
) -> tuple[Catalog, SalesPanel]:
    """Keep the ``top_n`` most active SKUs in ``window`` and build the daily panel.

    Reference price is the median observed unit price up to ``reference_until``
    (whole window when None); unit cost is ``cost_ratio`` times that.
    """
    if top_n < 1:
        raise IngestError("top_n must be >= 1")
    if not 0 < cost_ratio < 1:
        raise IngestError("cost_ratio must lie in (0, 1)")
    lo, hi = window
    if hi < lo:
        raise IngestError(f"empty window {lo}..{hi}")
    rows = in_window(rows, window)
    if not rows:
        raise IngestError(f"no transactions in window {lo}..{hi}")
    ranked = rank_skus(rows)
    if top_n > len(ranked):
        raise IngestError(f"top_n={top_n} exceeds the {len(ranked)} distinct SKUs available in the window")
    ranked = ranked[:top_n]
    skus = tuple(s for s, _ in ranked)
    col = {s: j for j, s in enumerate(skus)}

    n_days = (hi - lo).days + 1
    qty = np.zeros((n_days, top_n), dtype=np.int64)
    price_sum = np.zeros((n_days, top_n))
    lines = np.zeros((n_days, top_n), dtype=np.int64)
    invoices: dict[tuple[int, int], set[str]] = {}
    prices: dict[str, list[float]] = {s: [] for s in skus}
    ref_end = hi if reference_until is None else min(hi, reference_until)
    for r in rows:
        j = col.get(r.sku)
        if j is None:
            continue
        d = (r.timestamp.date() - lo).days
        qty[d, j] += r.quantity
        price_sum[d, j] += r.unit_price
        lines[d, j] += 1
        invoices.setdefault((d, j), set()).add(r.invoice_id)
        if r.timestamp.date() <= ref_end:
            prices[r.sku].append(r.unit_price)
    inv = np.zeros_like(lines)
    for (d, j), ids in invoices.items():
        inv[d, j] = len(ids)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_price = np.where(lines > 0, price_sum / np.maximum(lines, 1), np.nan)

    ref = np.empty(top_n)
    for j, s in enumerate(skus):
        observed = prices[s]
        if not observed:
            raise IngestError(f"SKU {s} has no observed price on or before {ref_end}")
        ref[j] = float(np.median(observed))
    catalog = Catalog(skus, ref, cost_ratio * ref, (lo, hi), np.array([c for _, c in ranked]))
    panel = SalesPanel(skus, lo, qty, mean_price, inv)
    return catalog, panel


# -- serialization -----------------------------------------------------------

CATALOG_HEADER = ("index", "sku", "reference_price", "unit_cost", "activity", "window_start", "window_end")
PANEL_HEADER = ("date", "sku", "quantity", "mean_unit_price", "invoice_count")
REJECT_HEADER = ("row", "reason", "raw")
TRANSACTION_HEADER = ("Invoice", "StockCode", "Quantity", "InvoiceDate", "Price", "Customer ID", "Country")


def write_catalog(catalog: Catalog, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CATALOG_HEADER)
        for j, s in enumerate(catalog.skus):
            w.writerow([j, s, repr(float(catalog.reference_price[j])), repr(float(catalog.unit_cost[j])),
                        int(catalog.activity[j]), catalog.window[0].isoformat(), catalog.window[1].isoformat()])


def read_catalog(path: str | Path) -> Catalog:
    with open(path, newline="") as fh:
        recs = list(csv.DictReader(fh))
    if not recs:
        raise IngestError(f"{path}: empty catalog")
    recs.sort(key=lambda r: int(r["index"]))
    window = (dt.date.fromisoformat(recs[0]["window_start"]), dt.date.fromisoformat(recs[0]["window_end"]))
    return Catalog(
        tuple(r["sku"] for r in recs),
        np.array([float(r["reference_price"]) for r in recs]),
        np.array([float(r["unit_cost"]) for r in recs]),
        window,
        np.array([int(r["activity"]) for r in recs]),
    )


def write_panel(panel: SalesPanel, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PANEL_HEADER)
        for d, day in enumerate(panel.dates()):
            for j, s in enumerate(panel.skus):
                p = panel.mean_price[d, j]
                w.writerow([day.isoformat(), s, int(panel.quantity[d, j]),
                            "" if np.isnan(p) else repr(float(p)), int(panel.invoice_count[d, j])])


def read_panel(path: str | Path, skus: Sequence[str]) -> SalesPanel:
    df = pd.read_csv(path, dtype={"sku": str, "date": str}, keep_default_na=True)
    days = sorted(set(df["date"]))
    start = dt.date.fromisoformat(days[0])
    n_days = (dt.date.fromisoformat(days[-1]) - start).days + 1
    col = {s: j for j, s in enumerate(skus)}
    qty = np.zeros((n_days, len(skus)), dtype=np.int64)
    price = np.full((n_days, len(skus)), np.nan)
    inv = np.zeros((n_days, len(skus)), dtype=np.int64)
    for rec in df.itertuples(index=False):
        d = (dt.date.fromisoformat(rec.date) - start).days
        j = col[rec.sku]
        qty[d, j] = rec.quantity
        price[d, j] = rec.mean_unit_price
        inv[d, j] = rec.invoice_count
    return SalesPanel(tuple(skus), start, qty, price, inv)


def write_rejects(rejects: Sequence[Reject], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REJECT_HEADER)
        for r in rejects:
            w.writerow([r.row, r.reason, r.raw])


def write_transactions(rows: Sequence[Transaction], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRANSACTION_HEADER)
        for r in rows:
            w.writerow([r.invoice_id, r.sku, r.quantity, r.timestamp.strftime("%Y-%m-%d %H:%M:%S"),
                        repr(r.unit_price), r.customer_id or "", r.country])
