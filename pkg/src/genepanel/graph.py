"""Cell neighbor graphs and Louvain community detection.

The pipeline is the usual single-cell one: a kNN graph over cells, shared
nearest neighbor (Jaccard) reweighting, then Louvain modularity optimization.
The local-moving phase is compiled with numba; everything else is numpy/scipy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist

from .errors import DegenerateInput, DimensionMismatch

SNN_PRUNE = 1.0 / 15.0
MOVE_TOL = 1e-12
PASS_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ClusterAssignment:
    """Integer labels in ``[0, n_clusters)`` with every cluster id occupied."""

    labels: np.ndarray
    n_clusters: int = field(init=False)

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.int64).ravel()
        if labels.size and labels.min() < 0:
            raise ValueError("cluster labels must be non-negative")
        k = int(labels.max()) + 1 if labels.size else 0
        if labels.size and np.unique(labels).size != k:
            raise ValueError("cluster ids must be contiguous 0..K-1; use ClusterAssignment.from_raw")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "n_clusters", k)

    def __len__(self):
        return self.labels.size

    @classmethod
    def from_raw(cls, raw) -> "ClusterAssignment":
        """Compact arbitrary hashable labels to 0..K-1 by order of first appearance."""
        mapping = {}
        out = np.empty(len(raw), dtype=np.int64)
        for i, lab in enumerate(raw):
            out[i] = mapping.setdefault(lab, len(mapping))
        return cls(out)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_clusters)


@dataclass(frozen=True, eq=False)
class NeighborGraph:
    """Symmetric, loop-free weighted graph over cells.

    ``neighbors`` holds the directed kNN lists the graph was built from, when
    known; SNN reweighting uses them.
    """

    adjacency: sp.csr_matrix
    neighbors: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_edges(self) -> int:
        return sp.triu(self.adjacency, k=1).nnz

    def edge_set(self) -> set:
        upper = sp.triu(self.adjacency, k=1).tocoo()
        return {(int(u), int(v)) for u, v in zip(upper.row, upper.col)}


@dataclass(frozen=True)
class ClusterParams:
    k: int = 15
    metric: str = "euclidean"
    resolution: float = 1.0
    seed: int = 0


def knn_graph(m, k: int = 15, metric: str = "euclidean") -> NeighborGraph:
    """Directed kNN over cell rows, symmetrized by union, unit weights.

    Distance ties go to the lower cell index; a cell is never its own neighbor.
    """
    x = m.dense() if hasattr(m, "dense") else np.asarray(m, dtype=np.float64)
    n = x.shape[0]
    if x.shape[1] == 0:
        raise DegenerateInput("empty feature space")
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < 2:
        raise DegenerateInput("need at least 2 cells for a neighbor graph")
    if metric == "euclidean":
        dist = cdist(x, x, "sqeuclidean")
    elif metric == "cosine":
        norms = np.linalg.norm(x, axis=1)
        safe = np.where(norms > 0, norms, 1.0)
        unit = x / safe[:, None]
        dist = 1.0 - unit @ unit.T
        zero = norms == 0
        dist[zero, :] = 1.0
        dist[:, zero] = 1.0
    else:
        raise ValueError(f"unknown metric {metric!r}")
    np.fill_diagonal(dist, np.inf)
    k_eff = min(k, n - 1)
    nbrs = np.argsort(dist, axis=1, kind="stable")[:, :k_eff]
    rows = np.repeat(np.arange(n), k_eff)
    directed = sp.csr_matrix((np.ones(rows.size), (rows, nbrs.ravel())), shape=(n, n))
    sym = directed.maximum(directed.T).tocsr()
    sym.setdiag(0)
    sym.eliminate_zeros()
    return NeighborGraph(sym, nbrs)


def snn_weights(g: NeighborGraph, k: int = 15, prune: float = SNN_PRUNE) -> NeighborGraph:
    """Reweight by Jaccard overlap of neighbor sets (each set includes the node itself).

    Every pair sharing at least one neighbor is scored; pairs below ``prune``
    are dropped.
    """
    n = g.n
    if g.neighbors is not None:
        if g.neighbors.shape[1] != min(k, n - 1):
            raise ValueError("graph was built with a different k")
        rows = np.repeat(np.arange(n), g.neighbors.shape[1])
        member = sp.csr_matrix((np.ones(rows.size), (rows, g.neighbors.ravel())), shape=(n, n))
    else:
        member = (g.adjacency > 0).astype(np.float64)
    member = (member + sp.identity(n, format="csr")).tocsr()
    member.data[:] = 1.0
    size = np.asarray(member.sum(axis=1)).ravel()
    shared = (member @ member.T).tocoo()
    off = shared.row != shared.col
    r, c, s = shared.row[off], shared.col[off], shared.data[off]
    jac = s / (size[r] + size[c] - s)
    keep = jac >= prune
    adj = sp.csr_matrix((jac[keep], (r[keep], c[keep])), shape=(n, n))
    return NeighborGraph(adj, g.neighbors)


def modularity(g, c: ClusterAssignment, resolution: float = 1.0) -> float:
    """Weighted modularity Q = (1/2m) sum_uv [A_uv - res * d_u d_v / 2m] delta(c_u, c_v)."""
    adj = g.adjacency if isinstance(g, NeighborGraph) else sp.csr_matrix(g)
    labels = c.labels if isinstance(c, ClusterAssignment) else np.asarray(c)
    if adj.shape[0] != labels.size:
        raise DimensionMismatch("assignment length does not match graph size")
    two_m = adj.sum()
    if two_m <= 0:
        raise DegenerateInput("empty graph")
    k = int(labels.max()) + 1
    ind = sp.csr_matrix((np.ones(labels.size), (np.arange(labels.size), labels)), shape=(labels.size, k))
    internal = (ind.T @ adj @ ind).diagonal()
    tot = ind.T @ np.asarray(adj.sum(axis=1)).ravel()
    return float((internal.sum() - resolution * (tot @ tot) / two_m) / two_m)


@numba.njit(cache=True)
def _move_nodes(indptr, indices, weights, degrees, order, comm, tot, resolution, two_m):
    n = degrees.size
    link = np.zeros(n)
    seen = np.zeros(n, dtype=np.bool_)
    touched = np.empty(n, dtype=np.int64)
    any_move = False
    while True:
        sweep_gain = 0.0
        for idx in range(n):
            u = order[idx]
            cu = comm[u]
            ku = degrees[u]
            n_touched = 0
            for p in range(indptr[u], indptr[u + 1]):
                v = indices[p]
                if v == u:
                    continue
                cv = comm[v]
                if not seen[cv]:
                    seen[cv] = True
                    touched[n_touched] = cv
                    n_touched += 1
                link[cv] += weights[p]
            tot[cu] -= ku
            stay = link[cu] - resolution * tot[cu] * ku / two_m
            best = cu
            best_gain = stay
            for t in range(n_touched):
                cc = touched[t]
                if cc == cu:
                    continue
                gain = link[cc] - resolution * tot[cc] * ku / two_m
                if gain > stay + MOVE_TOL:
                    if gain > best_gain + MOVE_TOL or (best != cu and abs(gain - best_gain) <= MOVE_TOL and cc < best):
                        best = cc
                        best_gain = gain
            tot[best] += ku
            if best != cu:
                comm[u] = best
                sweep_gain += 2.0 * (best_gain - stay) / two_m
                any_move = True
            for t in range(n_touched):
                link[touched[t]] = 0.0
                seen[touched[t]] = False
        if sweep_gain <= PASS_TOL:
            break
    return any_move


def _compact(labels: np.ndarray) -> np.ndarray:
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.empty(first.size, dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(first.size)
    return rank[inverse]


def louvain(g: NeighborGraph, resolution: float = 1.0, seed: int = 0, history: list | None = None) -> ClusterAssignment:
    """Multi-level Louvain; node visit order is shuffled per level from ``seed``.

    If ``history`` is given, the modularity of the original graph after each
    local-moving pass is appended to it.
    """
    n = g.n
    if n == 0:
        raise DegenerateInput("empty graph")
    partition = np.arange(n, dtype=np.int64)
    adj = sp.csr_matrix(g.adjacency, dtype=np.float64)
    two_m = adj.sum()
    if two_m <= 0:
        return ClusterAssignment(partition)
    rng = np.random.default_rng(seed)
    while True:
        adj.sort_indices()
        size = adj.shape[0]
        degrees = np.asarray(adj.sum(axis=1)).ravel()
        comm = np.arange(size, dtype=np.int64)
        tot = degrees.copy()
        order = rng.permutation(size).astype(np.int64)
        moved = _move_nodes(
            adj.indptr.astype(np.int64), adj.indices.astype(np.int64), adj.data,
            degrees, order, comm, tot, float(resolution), float(two_m),
        )
        comm = _compact(comm)
        partition = comm[partition]
        if history is not None:
            history.append(modularity(g, ClusterAssignment(_compact(partition)), resolution))
        n_comm = int(comm.max()) + 1
        if not moved or n_comm == size:
            break
        ind = sp.csr_matrix((np.ones(size), (np.arange(size), comm)), shape=(size, n_comm))
        adj = (ind.T @ adj @ ind).tocsr()
    return ClusterAssignment(_compact(partition))


def pseudo_labels(m, params: ClusterParams = ClusterParams()) -> ClusterAssignment:
    """kNN graph -> SNN reweighting -> Louvain."""
    if m.n_cells < 2:
        return ClusterAssignment(np.zeros(m.n_cells, dtype=np.int64))
    g = knn_graph(m, params.k, params.metric)
    g = snn_weights(g, params.k)
    return louvain(g, params.resolution, params.seed)
