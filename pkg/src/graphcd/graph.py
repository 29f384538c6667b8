"""Sparse graph values: loading, synthesis, homophily metrics, splits."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .tensor import SparseMatrix


class GraphError(ValueError):
    """Malformed graph input; message carries the offending location."""


@dataclass(frozen=True)
class Graph:
    """Immutable undirected graph with features, labels and named splits.

    `adj` is symmetric with no self-loops; splits map a name to a dict of
    disjoint `train` / `valid` / `test` node-index arrays.
    """

    num_nodes: int
    num_classes: int
    adj: sp.csr_matrix
    features: np.ndarray
    labels: np.ndarray
    splits: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.num_nodes
        if self.features.shape[0] != n or self.labels.shape[0] != n:
            raise GraphError("features/labels row count != num_nodes")
        if not np.all(np.isfinite(self.features)):
            raise GraphError("non-finite feature entries")
        if self.labels.min(initial=0) < 0 or (
                self.labels.size and self.labels.max() >= self.num_classes):
            bad = int(np.argmax(self.labels >= self.num_classes))
            raise GraphError(f"label out of range at node {bad}")
        if self.adj.shape != (n, n):
            raise GraphError("adjacency shape mismatch")
        if (self.adj != self.adj.T).nnz != 0:
            raise GraphError("adjacency is not symmetric")
        if self.adj.diagonal().any():
            raise GraphError("unexpected self-loops in adjacency")
        for name, split in self.splits.items():
            _check_split(name, split, n)

    @property
    def num_edges(self) -> int:
        """Undirected edge count (each edge stored twice in adj)."""
        return self.adj.nnz // 2

    def degrees(self) -> np.ndarray:
        return np.asarray((self.adj != 0).sum(axis=1)).ravel()

    def edge_pairs(self) -> np.ndarray:
        """Undirected edges as (m, 2) array with u < v."""
        coo = sp.triu(self.adj, k=1).tocoo()
        return np.stack([coo.row, coo.col], axis=1)

    def with_split(self, name: str, split: dict) -> "Graph":
        _check_split(name, split, self.num_nodes)
        merged = dict(self.splits)
        merged[name] = split
        return replace(self, splits=merged)


def _check_split(name, split, n):
    seen = {}
    for part in ("train", "valid", "test"):
        idx = np.asarray(split[part], dtype=np.intp)
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise GraphError(f"split '{name}' {part} index out of range")
        for i in idx:
            if int(i) in seen:
                raise GraphError(
                    f"split '{name}': node {int(i)} appears in both "
                    f"{seen[int(i)]} and {part}")
            seen[int(i)] = part


def _adj_from_pairs(num_nodes: int, pairs: np.ndarray) -> sp.csr_matrix:
    """Symmetrize an undirected edge list; rejects self-loops/duplicates."""
    if len(pairs) == 0:
        return sp.csr_matrix((num_nodes, num_nodes))
    pairs = np.asarray(pairs, dtype=np.intp)
    if pairs.min() < 0 or pairs.max() >= num_nodes:
        bad = int(np.argmax((pairs < 0) | (pairs >= num_nodes)).item())
        raise GraphError(f"edge endpoint out of range in edge {bad // 2}")
    if np.any(pairs[:, 0] == pairs[:, 1]):
        bad = int(np.argmax(pairs[:, 0] == pairs[:, 1]))
        raise GraphError(f"self-loop in edge list at line {bad}")
    lo = pairs.min(axis=1)
    hi = pairs.max(axis=1)
    keys = lo * num_nodes + hi
    if len(np.unique(keys)) != len(keys):
        raise GraphError("duplicate edge in edge list")
    row = np.concatenate([lo, hi])
    col = np.concatenate([hi, lo])
    data = np.ones(len(row))
    return sp.csr_matrix((data, (row, col)), shape=(num_nodes, num_nodes))


# ---------------------------------------------------------------------------
# loading / saving


def load_graph(path, fmt: str = "canonical-json",
               features_csv=None) -> Graph:
    """Load a graph from disk.

    `canonical-json` reads the self-contained JSON format; `edge-list`
    reads a whitespace pair-per-line edge file plus a features CSV whose
    row i holds node i's features with the label in the last column.
    """
    if fmt == "canonical-json":
        return _load_canonical_json(path)
    if fmt == "edge-list":
        if features_csv is None:
            raise GraphError("edge-list format requires a features CSV")
        return _load_edge_list(path, features_csv)
    raise GraphError(f"unknown format '{fmt}'")


def _load_canonical_json(path) -> Graph:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise GraphError(f"{path}: invalid JSON at line {e.lineno}") from e
    for key in ("num_nodes", "num_classes", "features", "labels", "edges"):
        if key not in doc:
            raise GraphError(f"{path}: missing field '{key}'")
    n = int(doc["num_nodes"])
    features = np.asarray(doc["features"], dtype=np.float64)
    labels = np.asarray(doc["labels"], dtype=np.intp)
    edges = np.asarray(doc["edges"], dtype=np.intp).reshape(-1, 2)
    if np.any(edges[:, 0] >= edges[:, 1]):
        bad = int(np.argmax(edges[:, 0] >= edges[:, 1]))
        raise GraphError(f"{path}: edge {bad} violates u < v ordering")
    splits = {}
    for name, parts in doc.get("splits", {}).items():
        splits[name] = {k: np.asarray(parts[k], dtype=np.intp)
                        for k in ("train", "valid", "test")}
    return Graph(num_nodes=n, num_classes=int(doc["num_classes"]),
                 adj=_adj_from_pairs(n, edges), features=features,
                 labels=labels, splits=splits)


def _load_edge_list(edge_path, csv_path) -> Graph:
    table = []
    with open(csv_path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                table.append([float(v) for v in line.split(",")])
            except ValueError as e:
                raise GraphError(f"{csv_path}:{lineno}: unparsable field") from e
    if not table:
        raise GraphError(f"{csv_path}: empty features file")
    arr = np.asarray(table)
    features, labels = arr[:, :-1], arr[:, -1].astype(np.intp)
    if np.any(arr[:, -1] != labels):
        raise GraphError(f"{csv_path}: non-integer label column")
    n = len(labels)
    pairs = []
    with open(edge_path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            toks = line.split()
            if len(toks) != 2:
                raise GraphError(f"{edge_path}:{lineno}: expected two fields")
            try:
                pairs.append((int(toks[0]), int(toks[1])))
            except ValueError as e:
                raise GraphError(f"{edge_path}:{lineno}: non-integer node id") from e
    pairs = np.asarray(pairs, dtype=np.intp).reshape(-1, 2)
    # edge lists may contain either orientation; dedupe after normalizing
    if len(pairs):
        lo, hi = pairs.min(axis=1), pairs.max(axis=1)
        pairs = np.unique(np.stack([lo, hi], axis=1), axis=0)
    return Graph(num_nodes=n, num_classes=int(labels.max()) + 1,
                 adj=_adj_from_pairs(n, pairs), features=features,
                 labels=labels)


def save_graph(g: Graph, path):
    doc = {
        "num_nodes": g.num_nodes,
        "num_classes": g.num_classes,
        "features": g.features.tolist(),
        "labels": g.labels.tolist(),
        "edges": g.edge_pairs().tolist(),
    }
    if g.splits:
        doc["splits"] = {
            name: {k: np.asarray(v).tolist() for k, v in parts.items()}
            for name, parts in g.splits.items()
        }
    with open(path, "w") as fh:
        json.dump(doc, fh)


# ---------------------------------------------------------------------------
# homophily metrics


def node_homophily(g: Graph) -> float:
    """Mean fraction of same-label 1-hop neighbors, over non-isolated nodes."""
    if g.num_edges == 0:
        raise GraphError("homophily undefined on a graph with no edges")
    coo = g.adj.tocoo()
    same = (g.labels[coo.row] == g.labels[coo.col]).astype(np.float64)
    deg = np.bincount(coo.row, minlength=g.num_nodes)
    agree = np.bincount(coo.row, weights=same, minlength=g.num_nodes)
    mask = deg > 0
    return float(np.mean(agree[mask] / deg[mask]))


def edge_homophily(g: Graph) -> float:
    """Fraction of undirected edges joining same-label endpoints."""
    pairs = g.edge_pairs()
    if len(pairs) == 0:
        raise GraphError("edge homophily undefined on a graph with no edges")
    return float(np.mean(g.labels[pairs[:, 0]] == g.labels[pairs[:, 1]]))


def adjusted_homophily(g: Graph) -> float:
    """Edge homophily corrected by its degree-preserving null expectation."""
    h_edge = edge_homophily(g)
    deg = g.degrees().astype(np.float64)
    two_m = deg.sum()
    d_k = np.bincount(g.labels, weights=deg, minlength=g.num_classes)
    null = float(np.sum(d_k ** 2) / two_m ** 2)
    if abs(1.0 - null) < 1e-12:
        raise GraphError("adjusted homophily undefined (degenerate classes)")
    return (h_edge - null) / (1.0 - null)


def local_homophily(g: Graph) -> np.ndarray:
    """Per-node same-label neighbor ratio; NaN for isolated nodes."""
    coo = g.adj.tocoo()
    same = (g.labels[coo.row] == g.labels[coo.col]).astype(np.float64)
    deg = np.bincount(coo.row, minlength=g.num_nodes).astype(np.float64)
    agree = np.bincount(coo.row, weights=same, minlength=g.num_nodes)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(deg > 0, agree / np.maximum(deg, 1), np.nan)


# ---------------------------------------------------------------------------
# synthetic graphs


@dataclass
class CsbmParams:
    """Contextual stochastic block model parameters."""

    num_nodes: int = 100
    num_classes: int = 2
    intra_p: float = 0.9
    inter_p: float = 0.9
    feature_dim: int = 2
    class_mean_separation: float = 1.0
    seed: int = 0

    def validate(self):
        if self.num_nodes < 2:
            raise GraphError("num_nodes must be >= 2")
        if not (0.0 <= self.intra_p <= 1.0 and 0.0 <= self.inter_p <= 1.0):
            raise GraphError("connection probabilities must lie in [0, 1]")
        if self.num_classes < 1 or self.feature_dim < 1:
            raise GraphError("num_classes and feature_dim must be >= 1")


def generate_csbm(p: CsbmParams) -> Graph:
    """Sample a class-structured random graph with Gaussian features.

    Class sizes differ by at most one; each unordered pair is connected
    independently with intra_p (same class) or inter_p (otherwise).
    Deterministic given the seed.
    """
    p.validate()
    rng = np.random.default_rng(p.seed)
    n, c = p.num_nodes, p.num_classes
    labels = np.arange(n) % c
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[ju], p.intra_p, p.inter_p)
    keep = rng.random(len(iu)) < prob
    pairs = np.stack([iu[keep], ju[keep]], axis=1)

    means = rng.standard_normal((c, p.feature_dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    means *= p.class_mean_separation
    features = means[labels] + rng.standard_normal((n, p.feature_dim))
    return Graph(num_nodes=n, num_classes=c, adj=_adj_from_pairs(n, pairs),
                 features=features, labels=labels)


def row_normalize_features(g: Graph) -> Graph:
    """Scale each node's feature row to unit Euclidean norm.

    Keeps flux magnitudes in the dynamics comparable across datasets;
    zero rows are left untouched.
    """
    norms = np.linalg.norm(g.features, axis=1, keepdims=True)
    feats = g.features / np.where(norms > 0, norms, 1.0)
    return replace(g, features=feats)


# ---------------------------------------------------------------------------
# receptive-field support and splits


def khop_support(g: Graph, eps: int, self_loop_weight: float = 1.0) -> SparseMatrix:
    """Pairs reachable within `eps` hops of (adjacency + self-loops).

    Returned structural values are 1 for neighbor pairs and
    `self_loop_weight` on the diagonal (the weighted-softmax multiplier).
    """
    if eps < 1:
        raise GraphError("eps must be >= 1")
    base = (g.adj != 0) + sp.eye(g.num_nodes, format="csr", dtype=bool)
    reach = base.copy()
    for _ in range(eps - 1):
        nxt = ((reach @ base) != 0).tocsr()
        if nxt.nnz == reach.nnz:
            break
        reach = nxt
    reach = sp.csr_matrix(reach, dtype=np.float64)
    reach.setdiag(self_loop_weight)
    reach.eliminate_zeros()
    reach.sort_indices()
    return SparseMatrix.from_scipy(reach)


def make_splits(g: Graph, fractions=(0.6, 0.2, 0.2), seed: int = 0,
                per_class: bool = True, name: str = "default") -> Graph:
    """Attach a deterministic train/valid/test split to the graph."""
    ftr, fva, fte = fractions
    if min(fractions) <= 0 or ftr + fva + fte > 1.0 + 1e-9:
        raise GraphError("fractions must be positive and sum to <= 1")
    rng = np.random.default_rng(seed)
    train, valid, test = [], [], []

    def cut(idx):
        idx = rng.permutation(idx)
        n_tr = int(round(ftr * len(idx)))
        n_va = int(round(fva * len(idx)))
        n_te = int(round(fte * len(idx)))
        if n_tr < 1 or n_va < 1 or n_te < 1:
            raise GraphError("a class has too few nodes for the stratified split")
        if n_tr + n_va + n_te > len(idx):
            n_te = len(idx) - n_tr - n_va
        train.extend(idx[:n_tr])
        valid.extend(idx[n_tr:n_tr + n_va])
        test.extend(idx[n_tr + n_va:n_tr + n_va + n_te])

    if per_class:
        for k in range(g.num_classes):
            cut(np.flatnonzero(g.labels == k))
    else:
        cut(np.arange(g.num_nodes))
    split = {"train": np.sort(np.asarray(train, dtype=np.intp)),
             "valid": np.sort(np.asarray(valid, dtype=np.intp)),
             "test": np.sort(np.asarray(test, dtype=np.intp))}
    return g.with_split(name, split)
