from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ks_2samp

from genepanel.expr import normalize, subset_genes
from genepanel.metrics import silhouette
from genepanel.synth import SynthConfig, generate_planted


def test_same_seed_identical():
    a = generate_planted(SynthConfig(seed=11))
    b = generate_planted(SynthConfig(seed=11))
    assert np.array_equal(a.matrix.dense(), b.matrix.dense())
    assert np.array_equal(a.true_labels.labels, b.true_labels.labels)
    assert a.informative == b.informative
    assert a.matrix.gene_ids == b.matrix.gene_ids


def test_different_seed_differs():
    a = generate_planted(SynthConfig(seed=1)).matrix.dense()
    b = generate_planted(SynthConfig(seed=2)).matrix.dense()
    assert not np.array_equal(a, b)


def test_zero_effect_makes_informative_genes_look_like_noise():
    ds = generate_planted(SynthConfig(n_cells=1000, n_genes=20, n_informative=5, effect_size=0.0, seed=4))
    x = ds.matrix.dense()
    informative = ds.informative.indices[0]
    noise = np.flatnonzero(~ds.informative.bits)[0]
    assert ks_2samp(x[:, informative], x[:, noise]).statistic < 0.2


def test_heavy_dropout():
    ds = generate_planted(SynthConfig(dropout_rate=0.99, seed=2))
    assert np.mean(ds.matrix.dense() == 0) >= 0.95


def test_shapes_and_counts():
    cfg = SynthConfig(n_cells=50, n_genes=40, n_informative=7, n_clusters=3, seed=0)
    ds = generate_planted(cfg)
    assert (ds.matrix.n_cells, ds.matrix.n_genes) == (50, 40)
    assert ds.informative.n_selected == 7
    assert ds.true_labels.n_clusters == 3


@pytest.mark.parametrize("field, value", [
    ("n_informative", 300), ("n_informative", -1), ("n_clusters", 1), ("n_clusters", 500),
    ("dropout_rate", 1.0), ("noise_scale", 0.0), ("effect_size", -1.0), ("imbalance", 0.5),
])
def test_invalid_config(field, value):
    with pytest.raises(ValueError):
        generate_planted(replace(SynthConfig(), **{field: value}))


def test_separability_grows_with_effect_size():
    for seed in range(1, 6):
        scores = []
        for effect in (2.0, 0.1):
            ds = generate_planted(SynthConfig(effect_size=effect, seed=seed))
            scores.append(silhouette(subset_genes(normalize(ds.matrix), ds.informative), ds.true_labels))
        assert scores[0] > scores[1]


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 60), st.integers(2, 6), st.floats(1.0, 8.0), st.integers(0, 10_000))
def test_no_empty_cluster(n_cells, n_clusters, imbalance, seed):
    n_clusters = min(n_clusters, n_cells)
    ds = generate_planted(SynthConfig(n_cells=n_cells, n_genes=5, n_informative=2, n_clusters=n_clusters,
                                      imbalance=imbalance, seed=seed))
    assert ds.true_labels.n_clusters == n_clusters
    assert np.all(ds.true_labels.sizes() > 0)


def test_imbalance_ratio():
    ds = generate_planted(SynthConfig(n_cells=400, n_clusters=4, imbalance=4.0, seed=0))
    sizes = ds.true_labels.sizes()
    assert sizes.max() / sizes.min() == pytest.approx(4.0, rel=0.1)
