import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crt.metrics import accuracy, binary_auc, confusion_matrix, evaluate_scores, macro_f1, roc_auc


def brute_auc(scores, positive):
    pos = [s for s, p in zip(scores, positive) if p]
    neg = [s for s, p in zip(scores, positive) if not p]
    total = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a, b in itertools.product(pos, neg))
    return total / (len(pos) * len(neg))


class TestAUC:
    def test_hand_example(self):
        assert binary_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75

    def test_perfect(self):
        assert binary_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_all_ties(self):
        assert binary_auc([0.5] * 6, [0, 1, 0, 1, 1, 0]) == 0.5

    def test_undefined(self):
        with pytest.raises(ValueError):
            binary_auc([0.1, 0.2], [1, 1])

    def test_multiclass_mean(self):
        scores = np.eye(3)[[0, 1, 2, 0]]
        per, mean = roc_auc(scores, [0, 1, 2, 0])
        assert per == [1.0, 1.0, 1.0] and mean == 1.0

    def test_missing_class_warns(self):
        with pytest.warns(UserWarning):
            per, _ = roc_auc(np.eye(3)[[0, 1, 0]], [0, 1, 0], num_classes=3)
        assert per[2] is None

    def test_binary_vector(self):
        _, mean = roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
        assert mean == 0.75


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 200))
def test_auc_equals_pair_count(seed, n):
    rng = np.random.default_rng(seed)
    scores = rng.integers(0, 10, n) / 10  # coarse grid forces ties
    positive = rng.random(n) < 0.5
    positive[0], positive[-1] = True, False
    assert binary_auc(scores, positive) == brute_auc(scores, positive)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_auc_monotone_invariance(seed):
    rng = np.random.default_rng(seed)
    scores = rng.standard_normal(40)
    positive = np.arange(40) % 2 == 0
    assert binary_auc(np.exp(3 * scores) + 1, positive) == binary_auc(scores, positive)


class TestF1:
    def test_perfect(self):
        assert macro_f1([0, 1, 2], [0, 1, 2])[1] == 1.0

    def test_all_one_class(self):
        _, f1 = macro_f1([1, 1, 1, 1], [0, 0, 1, 1], 2)
        assert f1 == pytest.approx(1 / 3)

    def test_empty_predicted_class(self):
        per, f1 = macro_f1([0, 0, 0], [0, 1, 1], 2)
        assert per[1] == 0.0 and np.isfinite(f1)


class TestAccuracy:
    def test_all_correct(self):
        assert accuracy([0, 1, 2], [0, 1, 2]) == (1.0, 1.0)

    def test_all_wrong(self):
        assert accuracy([1, 0, 1, 0], [0, 1, 0, 1]) == (0.0, 0.0)

    def test_hand_example(self):
        overall, per_class = accuracy([0, 1, 1], [0, 1, 2], 3)
        assert overall == pytest.approx(2 / 3)
        assert per_class == pytest.approx(7 / 9)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            accuracy([0, 1], [0])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    p, y = rng.integers(0, 4, 30), rng.integers(0, 4, 30)
    perm = rng.permutation(30)
    assert macro_f1(p, y, 4) == macro_f1(p[perm], y[perm], 4)
    assert accuracy(p, y, 4) == accuracy(p[perm], y[perm], 4)


def test_confusion_and_report():
    cm = confusion_matrix([0, 1, 1], [0, 1, 2], 3)
    assert cm.tolist() == [[1, 0, 0], [0, 1, 0], [0, 1, 0]]
    report = evaluate_scores(np.eye(3)[[0, 1, 1]] * 0.8 + 0.1, [0, 1, 2], 3)
    assert report.accuracy_overall == pytest.approx(2 / 3)
    assert set(report.flat_row()) == {"roc_auc", "f1_macro", "accuracy", "accuracy_per_class_mean"}
    assert '"confusion_matrix"' in report.to_json()
