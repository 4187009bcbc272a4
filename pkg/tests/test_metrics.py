import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qcluster import metrics
from qcluster.qsim import ContractError

labelings = st.integers(1, 40).flatmap(
    lambda n: st.tuples(st.lists(st.integers(0, 6), min_size=n, max_size=n),
                        st.lists(st.integers(0, 6), min_size=n, max_size=n))
)


def test_perfect_clustering():
    gt = [0, 0, 1, 1, 2]
    p, r, f, _ = metrics.pairwise_f(gt, [5, 5, 3, 3, 9])
    assert (p, r, f) == (1.0, 1.0, 1.0)
    assert metrics.bcubed_f(gt, [5, 5, 3, 3, 9]) == (1.0, 1.0, 1.0)


def test_hand_derived_fixture():
    gt, pred = [0, 0, 1], [0, 0, 0]
    p, r, f, counts = metrics.pairwise_f(gt, pred)
    assert counts == (1, 2, 0)
    assert p == 1 / 3 and r == 1.0
    assert f == 1 / math.sqrt(3)
    assert metrics.bcubed_fractions(gt, pred) == (Fraction(5, 9), Fraction(1), Fraction(5, 7))
    assert metrics.bcubed_f(gt, pred)[2] == 5 / 7


def test_all_singletons():
    gt = [0, 0, 1, 1]
    p, r, f, counts = metrics.pairwise_f(gt, [0, 1, 2, 3])
    assert counts == (0, 0, 2)
    assert (p, r, f) == (0.0, 0.0, 0.0)
    bp, br, bf = metrics.bcubed_f(gt, [0, 1, 2, 3])
    assert bp == 1.0 and br == 0.5 and bf == pytest.approx(2 / 3)


def test_length_mismatch():
    with pytest.raises(ContractError):
        metrics.pairwise_f([0, 1], [0])
    with pytest.raises(ContractError):
        metrics.bcubed_f([], [])


@settings(max_examples=200, deadline=None)
@given(labelings)
def test_optimized_equals_oracles(pair):
    gt, pred = pair
    assert metrics.pair_counts(gt, pred) == metrics.pair_oracle(gt, pred)
    assert metrics.bcubed_f(gt, pred) == metrics.bcubed_oracle(gt, pred)


@settings(max_examples=100, deadline=None)
@given(labelings)
def test_bounds_and_symmetry(pair):
    gt, pred = pair
    p, r, f, _ = metrics.pairwise_f(gt, pred)
    p2, r2, f2, _ = metrics.pairwise_f(pred, gt)
    assert 0 <= f <= 1
    assert (p, r, f) == (r2, p2, f2)
    bp, br, bf = metrics.bcubed_f(gt, pred)
    bp2, br2, bf2 = metrics.bcubed_f(pred, gt)
    assert 0 < bf <= 1
    assert (bp, br, bf) == (br2, bp2, bf2)
    assert metrics.bcubed_f(gt, gt)[2] == 1.0


@settings(max_examples=100, deadline=None)
@given(labelings, st.permutations(range(7)))
def test_relabeling_invariance(pair, perm):
    gt, pred = pair
    renamed = [perm[x] + 100 for x in pred]
    assert metrics.pairwise_f(gt, pred) == metrics.pairwise_f(gt, renamed)
    assert metrics.bcubed_f(gt, pred) == metrics.bcubed_f(gt, renamed)


@settings(max_examples=100, deadline=None)
@given(labelings)
def test_merging_predicted_clusters_cannot_lower_recall(pair):
    gt, pred = pair
    a, b = pred[0], pred[-1]
    merged = [a if x == b else x for x in pred]
    assert metrics.pairwise_f(gt, merged)[1] >= metrics.pairwise_f(gt, pred)[1]
    assert metrics.bcubed_f(gt, merged)[1] >= metrics.bcubed_f(gt, pred)[1]


def test_report_serialization():
    rep = metrics.evaluate_labels([0, 0, 1], [0, 0, 0])
    kv = dict(line.split("=") for line in rep.to_kv("x.").splitlines())
    assert kv["x.tp"] == "1"
    assert float(kv["x.bcubed_f"]) == pytest.approx(5 / 7, abs=1e-10)
    assert "BCubed" in rep.summary()
    assert set(rep.as_dict()) == {
        "pairwise_precision", "pairwise_recall", "pairwise_f",
        "bcubed_precision", "bcubed_recall", "bcubed_f", "tp", "fp", "fn",
    }


def test_large_labeling_runs_fast():
    rng = np.random.default_rng(0)
    gt = rng.integers(0, 500, 20000)
    pred = rng.integers(0, 400, 20000)
    rep = metrics.evaluate_labels(gt, pred)
    assert 0 <= rep.pairwise_f <= 1
