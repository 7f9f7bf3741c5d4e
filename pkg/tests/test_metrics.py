import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from genepanel.errors import DegenerateInput, DimensionMismatch
from genepanel.metrics import ari, contingency, nmi, silhouette
from oracles import brute_ari, brute_contingency, brute_nmi, brute_silhouette, canonical_labelings

labelings = st.integers(1, 14).flatmap(
    lambda n: st.tuples(st.lists(st.integers(0, 3), min_size=n, max_size=n),
                        st.lists(st.integers(0, 3), min_size=n, max_size=n)))


# -------------------------------------------------------------------- nmi

def test_nmi_identical():
    assert nmi([0, 1, 1, 2], [0, 1, 1, 2]) == 1.0


def test_nmi_independent():
    assert nmi([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(0.0, abs=1e-15)


def test_nmi_hand_value():
    value = nmi([0, 0, 1, 1], [0, 0, 0, 1])
    assert value == pytest.approx(brute_nmi([0, 0, 1, 1], [0, 0, 0, 1]), abs=1e-12)
    assert value == pytest.approx(0.3437, abs=5e-5)


def test_nmi_constant_conventions():
    assert nmi([0, 0, 0], [1, 1, 1]) == 1.0
    assert nmi([0, 0, 0], [0, 1, 1]) == 0.0


# -------------------------------------------------------------------- ari

def test_ari_identical():
    assert ari([2, 2, 0, 1], [0, 0, 1, 2]) == 1.0


def test_ari_random_near_zero():
    rng = np.random.default_rng(0)
    assert abs(ari(rng.integers(0, 4, 1000), rng.integers(0, 4, 1000))) < 0.1


def test_ari_four_items_pair_oracle():
    a, b = (0, 0, 1, 1), (0, 0, 1, 0)
    assert ari(a, b) == pytest.approx(brute_ari(a, b), abs=1e-12)


def test_ari_can_be_negative():
    assert ari([0, 0, 1, 1], [0, 1, 0, 1]) < 0


# ------------------------------------------------------------- silhouette

SQUARE = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]])


def test_silhouette_hand_example():
    value = silhouette(SQUARE, [0, 0, 1, 1])
    assert value == pytest.approx(brute_silhouette(SQUARE.tolist(), [0, 0, 1, 1]), abs=1e-12)
    assert value == pytest.approx(0.9002, abs=5e-5)


def test_silhouette_singleton_contributes_zero():
    pts = np.array([[0.0], [0.1], [5.0]])
    value = silhouette(pts, [0, 0, 1])
    # two non-singleton cells share the mean with a zero from the singleton
    s0 = (5.0 - 0.1) / 5.0
    s1 = (4.9 - 0.1) / 4.9
    assert value == pytest.approx((s0 + s1 + 0.0) / 3)


def test_silhouette_scale_symmetry():
    assert silhouette(7.5 * SQUARE, [0, 0, 1, 1]) == pytest.approx(silhouette(SQUARE, [0, 0, 1, 1]), abs=1e-12)


def test_silhouette_duplicated_points_follow_definition():
    # Duplicating points adds zero distances inside each cluster, so the value
    # moves; it must still agree with the definition.
    pts = np.vstack([SQUARE, SQUARE])
    labels = [0, 0, 1, 1] * 2
    assert silhouette(pts, labels) == pytest.approx(brute_silhouette(pts.tolist(), labels), abs=1e-12)


def test_silhouette_errors():
    with pytest.raises(DegenerateInput):
        silhouette(SQUARE, [0, 0, 0, 0])
    with pytest.raises(DegenerateInput):
        silhouette(SQUARE[:2], [0, 1])
    with pytest.raises(DimensionMismatch):
        silhouette(SQUARE, [0, 1])


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 20), st.integers(2, 4), st.integers(0, 10_000))
def test_silhouette_matches_oracle_and_range(n, k, seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n, 3))
    labels = rng.integers(0, k, n)
    if len(set(labels.tolist())) < 2:
        return
    value = silhouette(pts, labels)
    assert -1 <= value <= 1
    assert value == pytest.approx(brute_silhouette(pts.tolist(), labels.tolist()), abs=1e-9)


# ------------------------------------------------------------ contingency

def test_contingency_identity():
    np.testing.assert_array_equal(contingency([0, 1], [0, 1]).counts, np.eye(2))


@settings(max_examples=60, deadline=None)
@given(labelings)
def test_contingency_matches_loop_and_margins(pair):
    a, b = pair
    table = contingency(a, b)
    assert table.counts.tolist() == brute_contingency(a, b)
    assert table.row_sums.tolist() == [a.count(v) for v in sorted(set(a))]
    assert table.col_sums.tolist() == [b.count(v) for v in sorted(set(b))]


def test_contingency_length_mismatch():
    with pytest.raises(DimensionMismatch):
        contingency([0, 1], [0])


# ------------------------------------------------------------- properties

@settings(max_examples=200, deadline=None)
@given(labelings)
def test_symmetry_range_and_oracle(pair):
    a, b = pair
    assert nmi(a, b) == pytest.approx(nmi(b, a), abs=1e-12)
    assert ari(a, b) == pytest.approx(ari(b, a), abs=1e-12)
    assert 0.0 <= nmi(a, b) <= 1.0
    assert ari(a, b) <= 1.0 + 1e-12
    assert nmi(a, b) == pytest.approx(brute_nmi(a, b), abs=1e-12)
    assert ari(a, b) == pytest.approx(brute_ari(a, b), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(labelings, st.permutations(range(4)))
def test_permutation_invariance(pair, perm):
    a, b = pair
    relabeled = [perm[x] for x in a]
    assert nmi(relabeled, b) == pytest.approx(nmi(a, b), abs=1e-12)
    assert ari(relabeled, b) == pytest.approx(ari(a, b), abs=1e-12)


def test_exhaustive_small():
    for n in range(1, 6):
        labs = list(canonical_labelings(n))
        for a, b in itertools.product(labs, repeat=2):
            assert abs(nmi(a, b) - brute_nmi(a, b)) <= 1e-12
            assert abs(ari(a, b) - brute_ari(a, b)) <= 1e-12
