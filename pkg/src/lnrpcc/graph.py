"""Undirected, unweighted graphs built from feature vectors.

Four construction rules are supported:

``epsilon``
    connect ``i`` and ``j`` when their Euclidean distance is below ``sigma``.
``knn_or``
    connect when either point is among the other's ``k`` nearest neighbours.
``knn_pcc3``
    ``knn_or`` plus a clique over labeled samples that share a given label.
``knn_lnr``
    labeled samples nominate same-class labeled samples first; everyone else
    nominates plain nearest neighbours. Edges are the symmetric closure.

Nearest-neighbour ties are broken by the lower node index.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist

from .datasets import LabelConfig

POLICIES = ("epsilon", "knn_or", "knn_pcc3", "knn_lnr")


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class GraphPolicy:
    kind: str = "knn_lnr"
    k: int = 10
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in POLICIES:
            raise GraphError(f"unknown graph policy {self.kind!r}")
        if self.kind == "epsilon":
            if not self.sigma > 0:
                raise GraphError("sigma must be positive")
        elif self.k < 1:
            raise GraphError("k must be at least 1")


@dataclass
class Graph:
    """CSR adjacency: neighbours of ``i`` are ``indices[indptr[i]:indptr[i+1]]``, sorted."""

    n: int
    indptr: np.ndarray
    indices: np.ndarray

    @classmethod
    def from_edges(cls, n: int, src, dst) -> Graph:
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        keep = src != dst
        src, dst = src[keep], dst[keep]
        both = np.concatenate([src * n + dst, dst * n + src])
        codes = np.unique(both)
        rows, cols = np.divmod(codes, n)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
        return cls(n, indptr, cols.astype(np.int64))

    @property
    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def adjacency(self) -> list[list[int]]:
        return [self.neighbors(i).tolist() for i in range(self.n)]

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def has_edge(self, i: int, j: int) -> bool:
        nb = self.neighbors(i)
        pos = np.searchsorted(nb, j)
        return bool(pos < len(nb) and nb[pos] == j)

    def edges(self) -> np.ndarray:
        """``(E, 2)`` array of edges with ``i < j``, lexicographically sorted."""
        rows = np.repeat(np.arange(self.n), self.degree)
        mask = rows < self.indices
        return np.column_stack([rows[mask], self.indices[mask]])

    @property
    def n_edges(self) -> int:
        return len(self.indices) // 2

    def to_csr(self) -> csr_matrix:
        data = np.ones(len(self.indices), dtype=np.int8)
        return csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    def write_edgelist(self, path) -> None:
        lines = [f"{i} {j}" for i, j in self.edges()]
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))

    @classmethod
    def read_edgelist(cls, path, n: int) -> Graph:
        pairs = np.loadtxt(path, dtype=np.int64, ndmin=2)
        if pairs.size == 0:
            return cls.from_edges(n, [], [])
        return cls.from_edges(n, pairs[:, 0], pairs[:, 1])


class NeighborOrder:
    """Pairwise distances and per-row neighbour ranking for one feature matrix.

    Building the ranking is the O(n^2 log n) part of graph construction; it
    depends only on the features, so a harness can build it once per dataset
    and derive graphs for many ``k`` and label configurations from it.
    """

    def __init__(self, features: np.ndarray):
        x = np.asarray(features, dtype=np.float64)
        self.dist = cdist(x, x)
        if not np.all(np.isfinite(self.dist)):
            raise GraphError("non-finite pairwise distance")
        self.n = x.shape[0]
        d = self.dist.copy()
        np.fill_diagonal(d, np.inf)
        # stable sort so equal distances keep ascending index order
        self.order = np.argsort(d, axis=1, kind="stable")[:, : self.n - 1]


def _nominations_knn(order: NeighborOrder, k: int) -> tuple[np.ndarray, np.ndarray]:
    src = np.repeat(np.arange(order.n), k)
    dst = order.order[:, :k].ravel()
    return src, dst


def _nominations_lnr(order: NeighborOrder, cfg: LabelConfig, k: int):
    src, dst = [], []
    labeled = cfg.labeled_mask
    given = cfg.given_labels
    for i in range(order.n):
        row = order.order[i]
        if not labeled[i]:
            picks = row[:k]
        else:
            same = labeled[row] & (given[row] == given[i])
            mates = row[same]
            z = len(mates)
            if z >= k:
                picks = mates[:k]
            else:
                picks = np.concatenate([mates, row[~same][: k - z]])
        src.append(np.full(len(picks), i))
        dst.append(picks)
    return np.concatenate(src), np.concatenate(dst)


def _same_label_clique(cfg: LabelConfig) -> tuple[np.ndarray, np.ndarray]:
    src, dst = [], []
    idx = cfg.labeled_indices
    labels = cfg.given_labels[idx]
    for lab in np.unique(labels):
        members = idx[labels == lab]
        a, b = np.meshgrid(members, members, indexing="ij")
        src.append(a.ravel())
        dst.append(b.ravel())
    if not src:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    return np.concatenate(src), np.concatenate(dst)


def build_graph(features, cfg: LabelConfig, policy: GraphPolicy, order: NeighborOrder | None = None) -> Graph:
    """Build the graph for ``features`` under ``policy``.

    ``order`` may be passed to reuse a precomputed :class:`NeighborOrder`.
    Disconnected results are returned as-is.
    """
    if order is None:
        order = NeighborOrder(features)
    n = order.n
    if policy.kind == "epsilon":
        i, j = np.nonzero(order.dist < policy.sigma)
        return Graph.from_edges(n, i, j)

    if policy.k >= n:
        raise GraphError(f"k={policy.k} must be smaller than n={n}")
    if policy.kind == "knn_lnr":
        src, dst = _nominations_lnr(order, cfg, policy.k)
    else:
        src, dst = _nominations_knn(order, policy.k)
    if policy.kind == "knn_pcc3":
        cs, cd = _same_label_clique(cfg)
        src, dst = np.concatenate([src, cs]), np.concatenate([dst, cd])
    return Graph.from_edges(n, src, dst)


def components(g: Graph) -> np.ndarray:
    """Connected-component id per node, dense from 0 in order of lowest member."""
    _, ids = connected_components(g.to_csr(), directed=False)
    return ids.astype(np.int64)

