import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gennli import autodiff as ad
from gennli.objectives import (
    DISCRIMINATIVE,
    LossKind,
    batch_loss,
    cost_matrix,
    discriminative_loss,
    generative_nll,
    zero_one_cost,
)

mpmath.mp.dps = 50
GOLD, OTHER = -2.0, -2.5


def _mp_log_sum_exp(values):
    return mpmath.log(mpmath.fsum(mpmath.exp(mpmath.mpf(v)) for v in values))


class TestWorkedBinaryExample:
    """Gold score -2.0, other score -2.5, unit cost."""

    scores = [GOLD, OTHER]

    def test_perceptron(self):
        assert discriminative_loss("perceptron", self.scores, 0) == 0.0

    def test_hinge(self):
        assert discriminative_loss("hinge", self.scores, 0) == pytest.approx(0.5, abs=1e-12)

    def test_infinilog(self):
        assert discriminative_loss("infinilog", self.scores, 0) == pytest.approx(-0.5, abs=1e-12)

    def test_log(self):
        ref = float(-mpmath.mpf(GOLD) + _mp_log_sum_exp([GOLD, OTHER]))
        assert ref == pytest.approx(0.474077, abs=1e-6)
        assert discriminative_loss("log", self.scores, 0) == pytest.approx(ref, abs=1e-12)

    def test_softmax_margin(self):
        ref = float(-mpmath.mpf(GOLD) + _mp_log_sum_exp([GOLD, OTHER + 1]))
        assert ref == pytest.approx(0.974077, abs=1e-6)
        assert discriminative_loss("softmax-margin", self.scores, 0) == pytest.approx(ref, abs=1e-12)

    def test_bayes_risk(self):
        ref = float(mpmath.exp(OTHER) / (mpmath.exp(GOLD) + mpmath.exp(OTHER)))
        assert ref == pytest.approx(0.377541, abs=1e-6)
        assert discriminative_loss("bayes-risk", self.scores, 0) == pytest.approx(ref, abs=1e-12)


class TestGenerative:
    def test_zero_score(self):
        assert generative_nll(0.0) == 0.0

    def test_negative_score(self):
        assert generative_nll(-2.0) == 2.0

    def test_batch_matches_negated_gold_column(self):
        scores = np.array([[-1.0, -3.0], [-4.0, -0.5]])
        np.testing.assert_array_equal(batch_loss("generative", scores, [1, 0]).data, [3.0, 4.0])


class TestErrors:
    def test_infinilog_single_label(self):
        with pytest.raises(ValueError):
            discriminative_loss("infinilog", [-1.0], 0)

    def test_unknown_loss_name(self):
        with pytest.raises(ValueError, match="unknown"):
            LossKind.parse("squared")

    def test_gold_out_of_range(self):
        with pytest.raises(ValueError):
            batch_loss("log", np.zeros((1, 2)), [2])

    def test_generative_rejected_by_discriminative_loss(self):
        with pytest.raises(ValueError):
            discriminative_loss("generative", [-1.0, -2.0], 0)


def test_cli_names():
    assert [k.value for k in LossKind] == [
        "generative", "perceptron", "hinge", "log", "softmax-margin", "bayes-risk", "infinilog",
    ]  # fmt: skip
    assert len(DISCRIMINATIVE) == 6


# ---------------------------------------------------------------------------
# algebraic relations over random score draws


def _draws(n=1000, seed=0):
    """Label scores inside a window of width <= 20 nats, shifted to a random (negative) level.

    The -40 cost limit is within 1e-6 of infinilog only while the gold score
    leads the others by less than about 26 nats, hence the bounded window.
    """
    rng = np.random.default_rng(seed)
    for _ in range(n):
        Y = int(rng.choice([2, 3, 5]))
        width = rng.choice([0.2, 2.0, 20.0])
        yield rng.uniform(-width, 0.0, size=Y) - rng.uniform(0, 100), int(rng.integers(Y))


def _loss(kind, s, gold, costs=None):
    return batch_loss(kind, s[None, :], [gold], costs).item()


class TestLossRelations:
    def test_softmax_margin_zero_cost_is_log(self):
        for s, g in _draws():
            zero = np.zeros((len(s), len(s)))
            assert abs(_loss("softmax-margin", s, g, zero) - _loss("log", s, g)) < 1e-9

    def test_infinilog_is_softmax_margin_limit(self):
        for s, g in _draws():
            c = np.zeros((len(s), len(s)))
            np.fill_diagonal(c, -40.0)
            assert abs(_loss("softmax-margin", s, g, c) - _loss("infinilog", s, g)) < 1e-6

    def test_finite_cost_gap_has_closed_form(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            s, g = rng.normal(scale=30.0, size=3), int(rng.integers(3))
            c = np.zeros((3, 3))
            np.fill_diagonal(c, -40.0)
            others = np.delete(s, g)
            gap = np.log1p(np.exp(s[g] - 40.0 - np.logaddexp.reduce(others)))
            assert _loss("softmax-margin", s, g, c) - _loss("infinilog", s, g) == pytest.approx(gap, abs=1e-9)

    def test_orderings(self):
        for s, g in _draws():
            perceptron, hinge = _loss("perceptron", s, g), _loss("hinge", s, g)
            log, sm = _loss("log", s, g), _loss("softmax-margin", s, g)
            risk = _loss("bayes-risk", s, g)
            assert hinge >= perceptron >= 0
            assert log >= perceptron
            assert sm >= log >= 0
            assert 0 <= risk <= 1

    def test_shift_invariance(self):
        rng = np.random.default_rng(1)
        for s, g in _draws():
            c = rng.uniform(-100, 100)
            for kind in DISCRIMINATIVE:
                assert abs(_loss(kind, s + c, g) - _loss(kind, s, g)) < 1e-9, kind

    def test_infinilog_can_be_negative(self):
        assert _loss("infinilog", np.array([0.0, -10.0]), 0) < 0

    def test_bayes_risk_bounded_by_max_cost(self):
        costs = cost_matrix(lambda g, c: 0.0 if g == c else 3.0 * abs(g - c), 3)
        for s, g in _draws(200):
            if len(s) == 3:
                assert 0 <= _loss("bayes-risk", s, g, costs) <= costs.max()


@settings(max_examples=200)
@given(
    arrays(np.float64, st.sampled_from([2, 3, 5]), elements=st.floats(-200, 0, allow_nan=False)),
    st.integers(0, 4),
    st.floats(-1e3, 1e3),
)
def test_shift_invariance_property(scores, gold, shift):
    gold = gold % len(scores)
    for kind in DISCRIMINATIVE:
        assert _loss(kind, scores + shift, gold) == pytest.approx(_loss(kind, scores, gold), abs=1e-9)


def test_batched_losses_equal_per_instance():
    rng = np.random.default_rng(2)
    scores = rng.normal(size=(6, 3))
    gold = [0, 2, 1, 1, 0, 2]
    for kind in DISCRIMINATIVE:
        batched = batch_loss(kind, scores, gold).data
        single = [discriminative_loss(kind, s, g) for s, g in zip(scores, gold)]
        np.testing.assert_allclose(batched, single, rtol=1e-13)


def test_custom_cost_function():
    def cost(g, c):
        return 0.0 if g == c else 2.0

    assert discriminative_loss("hinge", [GOLD, OTHER], 0, cost) == pytest.approx(1.5)
    np.testing.assert_array_equal(cost_matrix(zero_one_cost, 2), [[0.0, 1.0], [1.0, 0.0]])


@pytest.mark.parametrize("kind", [k.value for k in DISCRIMINATIVE])
def test_gradients_wrt_scores(kind):
    rng = np.random.default_rng(3)
    scores = ad.Parameter(rng.normal(size=(4, 3)) * 2, "scores")  # distinct values, no ties
    gold = [0, 1, 2, 1]
    assert ad.finite_difference_check(lambda: ad.sum(batch_loss(kind, scores, gold)), [scores], epsilon=1e-6) < 1e-5
