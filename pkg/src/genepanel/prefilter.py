"""Ensemble gene pre-filtering.

Each scoring method ranks genes against pseudo-labels. Each method is weighted
by how well its own top-k panel reproduces the reference clustering. The
weighted scores are combined, and genes more than two standard deviations
above the mean score are kept.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.ensemble import RandomForestClassifier
from sklearn.linear_model import LogisticRegression
from sklearn.multiclass import OneVsRestClassifier

from .errors import DegenerateInput, DimensionMismatch
from .expr import ExpressionMatrix, GeneMask, subset_genes
from .graph import ClusterAssignment, ClusterParams, pseudo_labels
from .metrics import contingency, nmi

log = logging.getLogger(__name__)

METHODS = ("variance", "f_statistic", "mutual_info", "stump_forest", "rfe_linear")


@dataclass(frozen=True, eq=False)
class GeneScores:
    method_id: str
    scores: np.ndarray


@dataclass(frozen=True)
class MethodReliability:
    method_id: str
    p: float


@dataclass(frozen=True)
class PrefilterConfig:
    methods: tuple = METHODS
    min_genes: int = 30
    k: int | None = None
    n_bins: int = 8
    n_trees: int = 100
    cluster: ClusterParams = ClusterParams()
    seed: int = 0
    threads: int = 1


@dataclass(frozen=True, eq=False)
class PrefilterResult:
    weights: np.ndarray
    agg_scores: np.ndarray
    mu: float
    sigma: float
    mask: GeneMask
    method_ids: tuple = ()
    reliabilities: tuple = ()
    scores: tuple = ()
    reference: ClusterAssignment | None = None
    k: int = 0
    extras: dict = field(default_factory=dict)


def minmax(raw) -> np.ndarray:
    """Rescale to [0, 1]; an all-equal vector maps to 0.5 everywhere."""
    raw = np.asarray(raw, dtype=np.float64)
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        return np.full(raw.shape, 0.5)
    return (raw - lo) / (hi - lo)


def _anova_f(x, labels):
    n, k = labels.size, labels.max() + 1
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    sums = np.zeros((k, x.shape[1]))
    np.add.at(sums, labels, x)
    means = sums / counts[:, None]
    grand = x.mean(axis=0)
    between = (counts[:, None] * (means - grand) ** 2).sum(axis=0) / (k - 1)
    within = ((x - means[labels]) ** 2).sum(axis=0) / max(n - k, 1)
    f = np.zeros(x.shape[1])
    ok = within > 0
    f[ok] = between[ok] / within[ok]
    # zero within-group spread with nonzero between-group spread: perfectly separating gene
    perfect = (~ok) & (between > 0)
    if perfect.any():
        f[perfect] = f[ok].max() if ok.any() else 1.0
    return f


def _binned_mi(x, labels, n_bins):
    out = np.zeros(x.shape[1])
    for j in range(x.shape[1]):
        col = x[:, j]
        lo, hi = col.min(), col.max()
        if hi == lo:
            continue
        bins = np.minimum(((col - lo) / (hi - lo) * n_bins).astype(np.int64), n_bins - 1)
        table = contingency(bins, labels).counts.astype(np.float64)
        n = table.sum()
        outer = np.outer(table.sum(axis=1), table.sum(axis=0))
        nz = table > 0
        out[j] = (table[nz] / n * np.log(table[nz] * n / outer[nz])).sum()
    return np.maximum(out, 0.0)


def _stump_forest(x, labels, n_trees, seed):
    forest = RandomForestClassifier(n_estimators=n_trees, max_depth=2, random_state=seed, n_jobs=1)
    forest.fit(x, labels)
    return forest.feature_importances_


def _rfe_rounds(x, labels, seed):
    """Round (0-based) in which each gene is eliminated; survivors get the last round + 1."""
    sd = x.std(axis=0)
    xs = (x - x.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    n_genes = x.shape[1]
    rounds = np.zeros(n_genes)
    alive = np.arange(n_genes)
    r = 0
    while alive.size > 1:
        clf = OneVsRestClassifier(LogisticRegression(max_iter=500, random_state=seed))
        clf.fit(xs[:, alive], labels)
        coef = np.vstack([est.coef_ for est in clf.estimators_])
        weight = np.abs(coef).sum(axis=0)
        order = np.argsort(weight, kind="stable")
        drop = order[: alive.size // 2]
        rounds[alive[drop]] = r
        alive = np.delete(alive, drop)
        r += 1
    rounds[alive] = r
    return rounds


def score_genes(m: ExpressionMatrix, pseudo: ClusterAssignment, method: str, rng_seed: int = 0,
                n_bins: int = 8, n_trees: int = 100) -> GeneScores:
    """Importance of every gene for separating ``pseudo``, min-max scaled to [0, 1]."""
    labels = np.asarray(pseudo.labels)
    if labels.size != m.n_cells:
        raise DimensionMismatch("pseudo-labels do not match the number of cells")
    if np.unique(labels).size < 2:
        raise DegenerateInput("degenerate labels: need at least 2 clusters")
    x = m.dense()
    if method == "variance":
        raw = x.var(axis=0)
    elif method == "f_statistic":
        raw = _anova_f(x, labels)
    elif method == "mutual_info":
        raw = _binned_mi(x, labels, n_bins)
    elif method == "stump_forest":
        raw = _stump_forest(x, labels, n_trees, rng_seed)
    elif method == "rfe_linear":
        raw = _rfe_rounds(x, labels, rng_seed)
    else:
        raise ValueError(f"unknown scoring method {method!r}")
    return GeneScores(method, minmax(raw))


def top_k(scores, k: int) -> GeneMask:
    """The k highest scores; ties at the cut go to the lower gene index."""
    scores = np.asarray(getattr(scores, "scores", scores))
    if not 1 <= k <= scores.size:
        raise ValueError(f"k={k} outside [1, {scores.size}]")
    order = np.lexsort((np.arange(scores.size), -scores))
    return GeneMask.from_indices(order[:k], scores.size)


def evaluate_reliability(m: ExpressionMatrix, scores: GeneScores, k: int, reference: ClusterAssignment,
                         params: ClusterParams = ClusterParams()) -> MethodReliability:
    """NMI between the clustering of the method's top-k panel and ``reference``."""
    panel = subset_genes(m, top_k(scores, k))
    return MethodReliability(scores.method_id, nmi(pseudo_labels(panel, params), reference))


def meta_vote(all_scores, rels):
    """Reliability-normalized weights and the weighted per-gene score."""
    if not all_scores or len(all_scores) != len(rels):
        raise DimensionMismatch("need equal, non-empty lists of scores and reliabilities")
    mat = np.vstack([np.asarray(getattr(s, "scores", s), dtype=np.float64) for s in all_scores])
    p = np.array([getattr(r, "p", r) for r in rels], dtype=np.float64)
    if np.any(p < 0):
        raise ValueError("reliabilities must be non-negative")
    total = p.sum()
    weights = p / total if total > 0 else np.full(p.size, 1.0 / p.size)
    return weights, weights @ mat


def two_sigma_filter(agg_scores, min_genes: int = 30):
    """Keep genes strictly above mean + 2 * (population) std.

    Falls back to the ``min_genes`` best genes (ties to lower index) when too
    few pass.
    """
    s = np.asarray(agg_scores, dtype=np.float64)
    if s.size == 0:
        raise DegenerateInput("no genes to filter")
    # Work on scores shifted to start at zero: a constant offset then never
    # reaches the rounding in the mean and std, and constant input gives
    # exactly zero spread.
    low = s.min()
    d = s - low
    centre, sigma = float(d.mean()), float(d.std())
    mu = float(low) + centre
    bits = d > centre + 2.0 * sigma
    floor = min(min_genes, s.size)
    if bits.sum() < floor:
        return top_k(s, floor), mu, sigma
    return GeneMask(bits), mu, sigma


def default_k(n_genes: int) -> int:
    return max(1, min(500, n_genes // 10))


def prefilter_pipeline(m: ExpressionMatrix, cfg: PrefilterConfig = PrefilterConfig()) -> PrefilterResult:
    methods = tuple(cfg.methods)
    if not methods:
        raise ValueError("at least one scoring method is required")
    reference = pseudo_labels(m, cfg.cluster)
    k = cfg.k if cfg.k is not None else default_k(m.n_genes)
    k = min(k, m.n_genes)

    def run(method):
        sc = score_genes(m, reference, method, rng_seed=cfg.seed, n_bins=cfg.n_bins, n_trees=cfg.n_trees)
        return sc, evaluate_reliability(m, sc, k, reference, cfg.cluster)

    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            pairs = list(pool.map(run, methods))
    else:
        pairs = [run(method) for method in methods]
    scores = tuple(p[0] for p in pairs)
    rels = tuple(p[1] for p in pairs)
    weights, agg = meta_vote(scores, rels)
    mask, mu, sigma = two_sigma_filter(agg, cfg.min_genes)
    for r, w in zip(rels, weights):
        log.info("prefilter %-12s p=%.4f w=%.4f", r.method_id, r.p, w)
    return PrefilterResult(
        weights=weights, agg_scores=agg, mu=mu, sigma=sigma, mask=mask,
        method_ids=methods, reliabilities=rels, scores=scores, reference=reference, k=k,
    )
