"""Baseline panel selectors and the size-matched comparison table."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput
from .expr import ExpressionMatrix, GeneMask, subset_genes
from .graph import ClusterAssignment, ClusterParams, pseudo_labels
from .metrics import ari, nmi, silhouette
from .prefilter import PrefilterResult, top_k
from .reward import reward_spatial
from .selection import SelectConfig, SelectionResult, run_selection

log = logging.getLogger(__name__)

COLUMNS = ("method", "panel_size", "nmi", "ari", "silhouette", "iterations_to_best", "best_r_s")


@dataclass(frozen=True)
class GreedyResult:
    mask: GeneMask
    best_r_s: float
    evaluations_to_best: int
    n_evaluations: int
    # (cumulative evaluations, r_s) after every accepted addition
    trace: tuple


@dataclass(frozen=True)
class CompareRow:
    method: str
    panel_size: int
    nmi: float
    ari: float
    silhouette: float | None
    iterations_to_best: int | None
    best_r_s: float


def greedy_forward(m_pool: ExpressionMatrix, reference: ClusterAssignment, budget: int,
                   params: ClusterParams = ClusterParams()) -> GreedyResult:
    """Forward selection on r_s: repeatedly add the gene whose addition gives
    the highest r_s, lowest index on ties.

    Stops when ``budget`` genes are selected or when no candidate strictly
    improves r_s, so the accepted trace is non-decreasing by construction.
    Every candidate clustering counts as one evaluation.
    """
    n = m_pool.n_genes
    budget = min(budget, n)
    bits = np.zeros(n, dtype=bool)
    current, evals, evals_at_best = 0.0, 0, 0
    trace = []
    while bits.sum() < budget:
        best_gain, best_j = -np.inf, -1
        for j in np.flatnonzero(~bits):
            trial = bits.copy()
            trial[j] = True
            r_s = reward_spatial(subset_genes(m_pool, GeneMask(trial)), reference, params)
            evals += 1
            if r_s > best_gain:
                best_gain, best_j = r_s, j
        if best_gain <= current:
            break
        bits[best_j] = True
        current = best_gain
        evals_at_best = evals
        trace.append((evals, current))
    return GreedyResult(GeneMask(bits), current, evals_at_best, evals, tuple(trace))


def rl_steps_to_best(result: SelectionResult) -> tuple[float, int]:
    """Best r_s seen by the selector and how many reward evaluations it took,
    counting the injected panels first and then one per iteration."""
    offset = len(result.injected)
    candidates = [(rb.r_s, i + 1) for i, (_, _, rb) in enumerate(result.injected)]
    candidates += [(row.r_s, offset + row.iteration + 1) for row in result.trace]
    if not candidates:
        return float(result.best.r_s), 0
    best = max(c[0] for c in candidates)
    return best, min(step for r_s, step in candidates if r_s == best)


def panel_metrics(m: ExpressionMatrix, mask: GeneMask, labels: ClusterAssignment,
                  params: ClusterParams = ClusterParams()):
    """Cluster the cells on ``mask`` and score against ``labels``.

    Returns ``(nmi, ari, silhouette, predicted)``; silhouette is ``None`` when
    the panel clustering has a single cluster or the panel is empty.
    """
    if mask.n_selected == 0:
        predicted = ClusterAssignment(np.zeros(m.n_cells, dtype=np.int64))
        return nmi(predicted, labels), ari(predicted, labels), None, predicted
    m_panel = subset_genes(m, mask)
    predicted = pseudo_labels(m_panel, params)
    try:
        sil = silhouette(m_panel, predicted)
    except DegenerateInput as exc:
        log.warning("silhouette reported as null: %s", exc)
        sil = None
    return nmi(predicted, labels), ari(predicted, labels), sil, predicted


def compare_methods(m: ExpressionMatrix, prefilter: PrefilterResult, cfg: SelectConfig = SelectConfig(),
                    labels: ClusterAssignment | None = None, rl_result: SelectionResult | None = None,
                    include_greedy: bool = True) -> tuple[list, dict]:
    """Run every selector with the RL panel size as the shared budget.

    Metrics are computed against ``labels`` when given, otherwise against the
    pseudo-labels of the full matrix. ``best_r_s`` is measured against the
    pseudo-labels of the pre-filtered set, the selector's own objective.
    Returns the rows and a dict of extras (RL result, greedy result).
    """
    rl = rl_result if rl_result is not None else run_selection(m, prefilter, cfg)
    budget = max(1, rl.best_mask.n_selected)
    m_pre = subset_genes(m, prefilter.mask)
    pre_reference = pseudo_labels(m_pre, cfg.cluster)
    truth = labels if labels is not None else prefilter.reference

    def r_s_of(mask: GeneMask) -> float:
        return reward_spatial(subset_genes(m, mask), pre_reference, cfg.cluster)

    def row(method, mask, steps, r_s):
        score_nmi, score_ari, sil, _ = panel_metrics(m, mask, truth, cfg.cluster)
        return CompareRow(method, mask.n_selected, score_nmi, score_ari, sil, steps, r_s)

    rows = []
    rl_best, rl_steps = rl_steps_to_best(rl)
    rows.append(row("rl", rl.best_mask, rl_steps, rl_best))

    greedy = None
    if include_greedy:
        greedy = greedy_forward(m_pre, pre_reference, budget, cfg.cluster)
        full = np.zeros(m.n_genes, dtype=bool)
        full[prefilter.mask.indices[greedy.mask.indices]] = True
        rows.append(row("greedy_forward", GeneMask(full), greedy.evaluations_to_best, greedy.best_r_s))

    rng = np.random.default_rng(np.random.SeedSequence([cfg.master_seed, 5]))
    random_mask = GeneMask.from_indices(rng.choice(m.n_genes, size=min(budget, m.n_genes), replace=False),
                                        m.n_genes)
    rows.append(row("random_k", random_mask, None, r_s_of(random_mask)))

    for scores in prefilter.scores:
        mask = top_k(scores, budget)
        rows.append(row(f"topk_{scores.method_id}", mask, None, r_s_of(mask)))
    return rows, {"rl": rl, "greedy": greedy, "budget": budget}


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_compare_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS)
        for r in rows:
            writer.writerow([_cell(getattr(r, c)) for c in COLUMNS])


def format_table(rows) -> str:
    lines = [f"{'method':<22}{'size':>6}{'nmi':>8}{'ari':>8}{'sil':>8}{'steps':>8}{'r_s':>8}"]
    for r in rows:
        sil = "-" if r.silhouette is None else f"{r.silhouette:.3f}"
        steps = "-" if r.iterations_to_best is None else str(r.iterations_to_best)
        lines.append(f"{r.method:<22}{r.panel_size:>6}{r.nmi:>8.3f}{r.ari:>8.3f}{sil:>8}{steps:>8}{r.best_r_s:>8.3f}")
    return "\n".join(lines)
