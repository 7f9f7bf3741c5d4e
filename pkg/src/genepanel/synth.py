"""Synthetic expression data with planted informative genes and known labels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .expr import ExpressionMatrix, GeneMask
from .graph import ClusterAssignment


@dataclass(frozen=True)
class SynthConfig:
    n_cells: int = 300
    n_genes: int = 200
    n_informative: int = 30
    n_clusters: int = 4
    effect_size: float = 2.0
    dropout_rate: float = 0.2
    noise_scale: float = 1.0
    seed: int = 0
    base_mean: float = 1.0
    # largest / smallest cluster size; 1.0 gives balanced round-robin clusters
    imbalance: float = 1.0

    def validate(self) -> None:
        if self.n_cells < 1 or self.n_genes < 1:
            raise ValueError("n_cells and n_genes must be positive")
        if not 0 <= self.n_informative <= self.n_genes:
            raise ValueError(f"n_informative={self.n_informative} must lie in [0, n_genes={self.n_genes}]")
        if not 2 <= self.n_clusters <= self.n_cells:
            raise ValueError(f"n_clusters={self.n_clusters} must lie in [2, n_cells={self.n_cells}]")
        if not self.effect_size >= 0:
            raise ValueError("effect_size must be non-negative")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if not self.noise_scale > 0:
            raise ValueError("noise_scale must be positive")
        if not self.imbalance >= 1:
            raise ValueError("imbalance must be >= 1")


@dataclass(frozen=True, eq=False)
class SynthDataset:
    matrix: ExpressionMatrix
    true_labels: ClusterAssignment
    informative: GeneMask
    config: SynthConfig


def _cluster_labels(cfg: SynthConfig) -> np.ndarray:
    k, n = cfg.n_clusters, cfg.n_cells
    if cfg.imbalance == 1.0:
        return np.arange(n) % k
    weights = cfg.imbalance ** (-np.arange(k) / (k - 1))
    sizes = np.maximum(1, np.floor(weights / weights.sum() * n).astype(int))
    while sizes.sum() > n:
        sizes[np.argmax(sizes)] -= 1
    sizes[0] += n - sizes.sum()
    return np.repeat(np.arange(k), sizes)


def generate_planted(cfg: SynthConfig) -> SynthDataset:
    """Draw a log-normal expression matrix with cluster-shifted informative genes.

    Every gene has log-expression ``base_mean + noise_scale * eps``; an
    informative gene additionally gets ``effect_size * u[gene, cluster]`` with
    ``u ~ N(0, 1)`` fixed per (gene, cluster). Entries are then zeroed
    independently with probability ``dropout_rate``.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    labels = _cluster_labels(cfg)
    informative = np.sort(rng.choice(cfg.n_genes, size=cfg.n_informative, replace=False))
    offsets = np.zeros((cfg.n_clusters, cfg.n_genes))
    offsets[:, informative] = cfg.effect_size * rng.standard_normal((cfg.n_clusters, cfg.n_informative))
    log_expr = cfg.base_mean + offsets[labels] + cfg.noise_scale * rng.standard_normal((cfg.n_cells, cfg.n_genes))
    values = np.exp(log_expr)
    values[rng.random(values.shape) < cfg.dropout_rate] = 0.0

    width = len(str(max(cfg.n_genes, cfg.n_cells) - 1))
    matrix = ExpressionMatrix(
        sp.csr_matrix(values),
        tuple(f"gene{j:0{width}d}" for j in range(cfg.n_genes)),
        tuple(f"cell{i:0{width}d}" for i in range(cfg.n_cells)),
    )
    return SynthDataset(
        matrix=matrix,
        true_labels=ClusterAssignment(labels),
        informative=GeneMask.from_indices(informative, cfg.n_genes),
        config=cfg,
    )
