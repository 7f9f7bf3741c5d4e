"""Step reward: cluster agreement of the selected panel mixed with panel compactness."""

from __future__ import annotations

from dataclasses import dataclass

from .expr import ExpressionMatrix
from .graph import ClusterAssignment, ClusterParams, pseudo_labels
from .metrics import nmi


@dataclass(frozen=True)
class RewardBreakdown:
    r_s: float
    r_c: float
    r_total: float


def reward_compact(n_pre: int, n_sel: int, lam: float = 0.7) -> float:
    """(n_pre - n_sel) / (n_pre + lam * n_sel)."""
    if n_pre < 1:
        raise ValueError("n_pre must be >= 1")
    if not 0 <= n_sel <= n_pre:
        raise ValueError(f"n_sel={n_sel} outside [0, n_pre={n_pre}]")
    return (n_pre - n_sel) / (n_pre + lam * n_sel)


def reward_spatial(m_selected: ExpressionMatrix, pseudo: ClusterAssignment,
                   params: ClusterParams = ClusterParams()) -> float:
    """NMI between a fresh clustering of the selected genes and the pseudo-labels."""
    if m_selected.n_genes == 0:
        return 0.0
    return nmi(pseudo_labels(m_selected, params), pseudo)


def reward_total(r_s: float, r_c: float, alpha: float = 0.5) -> RewardBreakdown:
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    return RewardBreakdown(r_s, r_c, alpha * r_s + (1 - alpha) * r_c)
