"""Co-purchase item graph: invoice-level co-occurrence, threshold, top-k pruning."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .ingest import Catalog, Transaction


@dataclass(frozen=True)
class ItemGraph:
    """Directed sparse graph over catalog indices.

    ``neighbors[i]`` lists the outgoing neighbors of ``i`` ordered by
    (weight desc, SKU id asc); ``weights[i]`` holds the matching weights.
    """

    skus: tuple[str, ...]
    neighbors: tuple[tuple[int, ...], ...]
    weights: tuple[tuple[float, ...], ...]
    k: int
    tau: float

    @property
    def n(self) -> int:
        return len(self.skus)

    @property
    def num_edges(self) -> int:
        return sum(len(nb) for nb in self.neighbors)

    def out_degree(self) -> np.ndarray:
        return np.array([len(nb) for nb in self.neighbors])

    def edges(self) -> list[tuple[int, int, float]]:
        return [(i, j, w) for i, (nb, ws) in enumerate(zip(self.neighbors, self.weights)) for j, w in zip(nb, ws)]

    def attention_index(self) -> tuple[np.ndarray, np.ndarray]:
        """(target, source) arrays over {i} U N(i) for every node; self entries come first."""
        tgt = list(range(self.n))
        src = list(range(self.n))
        for i, nb in enumerate(self.neighbors):
            tgt.extend([i] * len(nb))
            src.extend(nb)
        return np.array(tgt, dtype=np.int64), np.array(src, dtype=np.int64)

    def permuted(self, perm: Sequence[int]) -> "ItemGraph":
        """Relabel so that new node ``perm[i]`` is old node ``i``."""
        perm = list(perm)
        inv = [0] * self.n
        for old, new in enumerate(perm):
            inv[new] = old
        return ItemGraph(
            tuple(self.skus[inv[i]] for i in range(self.n)),
            tuple(tuple(perm[j] for j in self.neighbors[inv[i]]) for i in range(self.n)),
            tuple(self.weights[inv[i]] for i in range(self.n)),
            self.k,
            self.tau,
        )


def cooccurrence_counts(rows: Iterable[Transaction], catalog: Catalog) -> sparse.csr_matrix:
    """Symmetric matrix of the number of invoices containing both SKUs."""
    col = {s: j for j, s in enumerate(catalog.skus)}
    baskets: dict[str, set[int]] = {}
    for r in rows:
        j = col.get(r.sku)
        if j is not None:
            baskets.setdefault(r.invoice_id, set()).add(j)
    pairs: dict[tuple[int, int], int] = {}
    for items in baskets.values():
        for a, b in combinations(sorted(items), 2):
            pairs[(a, b)] = pairs.get((a, b), 0) + 1
    n = catalog.n
    if not pairs:
        return sparse.csr_matrix((n, n), dtype=np.float64)
    ab = np.array(list(pairs.keys()))
    w = np.array(list(pairs.values()), dtype=np.float64)
    rows_ = np.concatenate([ab[:, 0], ab[:, 1]])
    cols_ = np.concatenate([ab[:, 1], ab[:, 0]])
    return sparse.csr_matrix((np.concatenate([w, w]), (rows_, cols_)), shape=(n, n))


def basket_counts(rows: Iterable[Transaction], catalog: Catalog) -> tuple[np.ndarray, int]:
    """Invoices containing each catalog SKU, and the number of invoices with any catalog SKU."""
    col = {s: j for j, s in enumerate(catalog.skus)}
    baskets: dict[str, set[int]] = {}
    for r in rows:
        j = col.get(r.sku)
        if j is not None:
            baskets.setdefault(r.invoice_id, set()).add(j)
    counts = np.zeros(catalog.n)
    for items in baskets.values():
        counts[list(items)] += 1
    return counts, len(baskets)


def lift(weights: sparse.spmatrix, basket_counts: np.ndarray, n_baskets: int) -> sparse.csr_matrix:
    """Normalized lift variant: w_ij * B / (n_i * n_j)."""
    coo = sparse.coo_matrix(weights)
    vals = coo.data * n_baskets / (basket_counts[coo.row] * basket_counts[coo.col])
    return sparse.csr_matrix((vals, (coo.row, coo.col)), shape=coo.shape)


def build_graph(weights: sparse.spmatrix | np.ndarray, skus: Sequence[str], tau: float = 2, k: int = 12) -> ItemGraph:
    if tau <= 0:
        raise ValueError("tau must be positive")
    if k < 1:
        raise ValueError("k must be >= 1")
    dense = weights.toarray() if sparse.issparse(weights) else np.asarray(weights, dtype=float)
    n = len(skus)
    if dense.shape != (n, n):
        raise ValueError(f"weight matrix shape {dense.shape} does not match {n} SKUs")
    neighbors, ws = [], []
    for i in range(n):
        cand = [(j, dense[i, j]) for j in range(n) if j != i and dense[i, j] >= tau]
        cand.sort(key=lambda t: (-t[1], skus[t[0]]))
        cand = cand[:k]
        neighbors.append(tuple(j for j, _ in cand))
        ws.append(tuple(float(w) for _, w in cand))
    return ItemGraph(tuple(skus), tuple(neighbors), tuple(ws), k, float(tau))


def weak_components(graph: ItemGraph) -> list[set[int]]:
    """Weakly connected components, largest first (ties by smallest member)."""
    edges = graph.edges()
    if edges:
        src, dst, _ = zip(*edges)
        adj = sparse.csr_matrix((np.ones(len(src)), (src, dst)), shape=(graph.n, graph.n))
    else:
        adj = sparse.csr_matrix((graph.n, graph.n))
    _, labels = connected_components(adj, directed=True, connection="weak")
    comps: dict[int, set[int]] = {}
    for node, lab in enumerate(labels):
        comps.setdefault(int(lab), set()).add(node)
    return sorted(comps.values(), key=lambda c: (-len(c), min(c)))


def write_graph(graph: ItemGraph, edge_path: str | Path, meta_path: str | Path) -> None:
    with open(edge_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("src_sku", "dst_sku", "weight"))
        for i, j, wt in graph.edges():
            w.writerow([graph.skus[i], graph.skus[j], repr(wt)])
    with open(meta_path, "w") as fh:
        json.dump({"n": graph.n, "k": graph.k, "tau": graph.tau, "skus": list(graph.skus)}, fh, indent=2)
        fh.write("\n")


def read_graph(edge_path: str | Path, meta_path: str | Path) -> ItemGraph:
    with open(meta_path) as fh:
        meta = json.load(fh)
    skus = tuple(meta["skus"])
    col = {s: j for j, s in enumerate(skus)}
    nb: list[list[int]] = [[] for _ in skus]
    ws: list[list[float]] = [[] for _ in skus]
    with open(edge_path, newline="") as fh:
        for rec in csv.DictReader(fh):
            i = col[rec["src_sku"]]
            nb[i].append(col[rec["dst_sku"]])
            ws[i].append(float(rec["weight"]))
    return ItemGraph(skus, tuple(map(tuple, nb)), tuple(map(tuple, ws)), int(meta["k"]), float(meta["tau"]))
