"""Clustering agreement and cohesion metrics: NMI, ARI, silhouette."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DegenerateInput, DimensionMismatch


def _labels(x) -> np.ndarray:
    return np.asarray(getattr(x, "labels", x)).ravel()


@dataclass(frozen=True, eq=False)
class ContingencyTable:
    counts: np.ndarray

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def col_sums(self) -> np.ndarray:
        return self.counts.sum(axis=0)


def contingency(a, b) -> ContingencyTable:
    a, b = _labels(a), _labels(b)
    if a.size != b.size:
        raise DimensionMismatch(f"labelings have lengths {a.size} and {b.size}")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    shape = (ai.max() + 1 if ai.size else 0, bi.max() + 1 if bi.size else 0)
    counts = np.bincount(ai * shape[1] + bi, minlength=shape[0] * shape[1]).reshape(shape)
    return ContingencyTable(counts.astype(np.int64, copy=False))


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def nmi(a, b) -> float:
    """Arithmetic-mean normalized mutual information, natural logs.

    Two constant labelings score 1; exactly one constant labeling scores 0.
    """
    table = contingency(a, b)
    n = table.n
    if n == 0:
        raise DegenerateInput("nmi of empty labelings")
    ha, hb = _entropy(table.row_sums, n), _entropy(table.col_sums, n)
    if ha == 0.0 and hb == 0.0:
        return 1.0
    if ha == 0.0 or hb == 0.0:
        return 0.0
    c = table.counts
    nz = c > 0
    outer = np.outer(table.row_sums, table.col_sums)
    mi = float((c[nz] / n * np.log(c[nz] * n / outer[nz])).sum())
    return float(min(1.0, max(0.0, 2.0 * mi / (ha + hb))))


def _comb2(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1) / 2.0


def ari(a, b) -> float:
    """Pair-counting adjusted Rand index, not clamped (can be negative).

    With fewer than two items there are no pairs to disagree on and the
    index is 1.
    """
    table = contingency(a, b)
    n = table.n
    if n == 0:
        raise DegenerateInput("ari of empty labelings")
    if n < 2:
        return 1.0
    index = _comb2(table.counts).sum()
    sa, sb = _comb2(table.row_sums).sum(), _comb2(table.col_sums).sum()
    expected = sa * sb / _comb2(n)
    max_index = (sa + sb) / 2.0
    if max_index == expected:
        return 1.0
    return float((index - expected) / (max_index - expected))


def silhouette(m, labels) -> float:
    """Mean silhouette with euclidean distances; singleton-cluster cells score 0."""
    x = m.dense() if hasattr(m, "dense") else np.asarray(m, dtype=np.float64)
    lab = _labels(labels)
    if x.shape[0] != lab.size:
        raise DimensionMismatch("labels do not match the number of cells")
    if lab.size < 3:
        raise DegenerateInput("silhouette needs at least 3 cells")
    uniq, inv = np.unique(lab, return_inverse=True)
    if uniq.size < 2:
        raise DegenerateInput("silhouette undefined for a single cluster")
    dist = cdist(x, x)
    onehot = np.zeros((lab.size, uniq.size))
    onehot[np.arange(lab.size), inv] = 1.0
    sizes = onehot.sum(axis=0)
    sums = dist @ onehot
    own_size = sizes[inv]
    idx = np.arange(lab.size)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = sums[idx, inv] / (own_size - 1)
        means = sums / sizes
    means[idx, inv] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where((own_size > 1) & (denom > 0), (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(s.mean())
