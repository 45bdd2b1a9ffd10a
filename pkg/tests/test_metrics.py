import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gennli.metrics import ConfusionMatrix, binary_mcc, mcc


def _binary(tp, tn, fp, fn):
    """Reference binary MCC written out directly."""
    den = math.sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
    return 0.0 if den == 0 else (tp * tn - fp * fn) / den


class TestMCC:
    def test_perfect_diagonal(self):
        assert mcc(np.diag([5, 7, 3])) == pytest.approx(1.0)

    def test_single_hit_each(self):
        assert binary_mcc(tp=1, tn=1, fp=0, fn=0) == 1.0

    def test_reference_matrix(self):
        value = binary_mcc(tp=50, tn=40, fp=10, fn=0)
        assert value == pytest.approx(2000 / math.sqrt(60 * 50 * 40 * 50), abs=1e-12)
        assert value == pytest.approx(0.8165, abs=1e-4)

    def test_constant_prediction_is_zero(self):
        assert mcc(np.array([[30, 0], [20, 0]])) == 0.0
        assert mcc(np.array([[0, 4, 0], [0, 9, 0], [0, 1, 0]])) == 0.0

    def test_independent_margins_give_zero(self):
        rows, cols = np.array([2, 3, 5]), np.array([1, 4, 5])
        assert mcc(np.outer(rows, cols)) == pytest.approx(0.0, abs=1e-12)

    def test_inverted_binary(self):
        assert binary_mcc(tp=0, tn=0, fp=5, fn=5) == -1.0

    @given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
    def test_binary_matches_closed_form(self, tp, tn, fp, fn):
        if tp + tn + fp + fn == 0:
            return
        assert binary_mcc(tp, tn, fp, fn) == pytest.approx(_binary(tp, tn, fp, fn), abs=1e-12)

    @given(arrays(np.int64, st.sampled_from([(2, 2), (3, 3), (4, 4)]), elements=st.integers(0, 30)))
    def test_range(self, counts):
        if counts.sum() == 0:
            return
        assert -1.0 - 1e-12 <= mcc(counts) <= 1.0 + 1e-12

    @pytest.mark.parametrize("bad", [np.zeros((2, 3)), np.array([[1, -1], [0, 1]]), np.zeros((2, 2))])
    def test_invalid_matrices(self, bad):
        with pytest.raises(ValueError):
            mcc(bad)


class TestConfusionMatrix:
    def test_all_correct(self):
        cm = ConfusionMatrix.from_predictions([0, 1, 2, 1], [0, 1, 2, 1], 3)
        assert cm.accuracy() == 1.0
        np.testing.assert_array_equal(cm.counts, np.diag([1, 2, 1]))

    def test_constant_prediction_gives_majority_share(self):
        cm = ConfusionMatrix.from_predictions([0, 0, 0, 1], [0, 0, 0, 0], 2)
        assert cm.accuracy() == 0.75

    def test_rows_count_gold_labels(self):
        gold = [0, 2, 2, 1, 0, 2]
        cm = ConfusionMatrix.from_predictions(gold, [1, 2, 0, 1, 0, 0], 3)
        np.testing.assert_array_equal(cm.counts.sum(axis=1), np.bincount(gold, minlength=3))
        assert cm.accuracy() == np.trace(cm.counts) / cm.total
