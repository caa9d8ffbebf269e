import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmss import autograd as ag
from mmss.autograd import Node
from mmss.objectives import (
    ranking_loss,
    ranking_pairs,
    sigmas_from_log_vars,
    subtask_loss,
    total_loss,
    uncertainty_combine,
)

from conftest import numeric_grad


def leaf(x):
    return Node(np.array(x, dtype=np.float64), requires_grad=True)


class TestRankingLoss:
    def test_separated_pair(self):
        assert ranking_loss([1.5, 0.0], [4, 1]).value == 0.0

    def test_tied_scores(self):
        assert ranking_loss([0.3, 0.3], [4, 1]).value == 1.0

    def test_three_pairs(self):
        pos, neg = ranking_pairs([4, 2, 0])
        assert len(pos) == 3
        assert ranking_loss([0.0, 0.0, 0.0], [4, 2, 0]).value == 1.0

    def test_no_pairs(self):
        assert ranking_loss([0.1, 0.7], [2, 2]).value == 0.0

    def test_margin_must_be_positive(self):
        with pytest.raises(ValueError):
            ranking_loss([0.0, 1.0], [0, 1], margin=0.0)

    def test_mean_not_sum(self):
        # two violated pairs of 0.5 each average to 0.5
        assert ranking_loss([0.5, 0.0, 0.0], [4, 0, 0]).value == pytest.approx(0.5)

    def test_gradient(self):
        s = leaf([0.2, 0.9, -0.4, 0.1])
        labels = [3, 1, 2, 0]
        ranking_loss(s, labels).backward()
        num = numeric_grad(lambda: float(ranking_loss(s, labels).value), s)
        np.testing.assert_allclose(s.grad, num, atol=1e-8)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=2, max_size=8), st.floats(-100, 100), st.data())
    def test_translation_invariant(self, scores, shift, data):
        labels = data.draw(st.lists(st.integers(0, 4), min_size=len(scores), max_size=len(scores)))
        a = ranking_loss(scores, labels).value
        b = ranking_loss(np.array(scores) + shift, labels).value
        assert a == pytest.approx(b, abs=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 4), st.integers(-12, 12)), min_size=2, max_size=8))
    def test_zero_iff_separated(self, rows):
        labels, ticks = zip(*rows)
        scores = np.array(ticks) / 4.0
        pos, neg = ranking_pairs(labels)
        separated = bool(np.all(scores[pos] - scores[neg] >= 1.0))
        assert (ranking_loss(scores, labels).value == 0.0) == separated


class TestSubtaskLoss:
    def test_hand_value(self):
        out = subtask_loss({"s": leaf([1.0])}, {"s": [3.0]}, [2.0])
        assert out["s"].value == pytest.approx(math.tanh(1.0) * 2, abs=1e-12)
        assert out["s"].value == pytest.approx(1.5232, abs=1e-4)

    def test_pseudo_equals_gold(self):
        out = subtask_loss({"s": leaf([-7.0, 9.0])}, {"s": [2.0, 1.0]}, [2.0, 1.0])
        assert out["s"].value == 0.0

    def test_exact_prediction(self):
        out = subtask_loss({"s": leaf([3.5])}, {"s": [3.5]}, [0.0])
        assert out["s"].value == 0.0

    def test_targets_carry_no_gradient(self):
        pred = leaf([1.0, 2.5])
        target = leaf([3.0, 0.5])
        out = subtask_loss({"s": pred}, {"s": target.value}, [2.0, 1.0])
        out["s"].backward()
        assert target.grad is None
        w = np.tanh(np.abs(target.value - [2.0, 1.0]))
        np.testing.assert_allclose(pred.grad, w * np.sign(pred.value - target.value) / 2)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.floats(-5, 5), st.floats(0, 4), st.integers(0, 4)), min_size=1, max_size=6))
    def test_non_negative(self, rows):
        pred, pseudo, gold = map(np.array, zip(*rows))
        assert subtask_loss({"s": pred}, {"s": pseudo}, gold)["s"].value >= 0.0


class TestUncertainty:
    def test_unit_sigma(self):
        losses = {k: ag.constant(v) for k, v in zip("abcde", [1.0, 2.0, 0.5, 0.0, 3.0])}
        etas = {k: leaf(0.0) for k in "abcde"}
        assert uncertainty_combine(losses, etas).value == pytest.approx(3.25)

    def test_log4(self):
        out = uncertainty_combine({"a": ag.constant(2.0)}, {"a": leaf(math.log(4.0))})
        assert out.value == pytest.approx(0.25 + math.log(4.0) / 2, abs=1e-12)
        assert out.value == pytest.approx(0.9431, abs=1e-4)

    def test_gradient_matches_fd(self):
        eta = leaf(0.37)
        loss = leaf(1.3)

        def build():
            return uncertainty_combine({"a": loss}, {"a": eta})

        build().backward()
        assert eta.grad == pytest.approx(numeric_grad(lambda: float(build().value), eta), abs=1e-8)
        assert loss.grad == pytest.approx(numeric_grad(lambda: float(build().value), loss), abs=1e-8)

    def test_stationary_point(self):
        eta = leaf(math.log(2.0))
        uncertainty_combine({"a": ag.constant(2.0)}, {"a": eta}).backward()
        assert eta.grad == pytest.approx(0.0, abs=1e-12)

    def test_empty(self):
        assert uncertainty_combine({}, {}).value == 0.0

    def test_sigmas(self):
        s = sigmas_from_log_vars({"a": leaf(math.log(4.0)), "b": 0.0})
        assert s == {"a": pytest.approx(2.0), "b": 1.0}


def test_total_loss():
    assert total_loss(0.0, 0.0).value == 0.0
    assert total_loss(1.5, 0.25).value == 1.75
