import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moe_congestion.core import (
    GameParams,
    LoadDistribution,
    QualityVector,
    entropy_normalized,
    l1_distance,
    quality_spread,
    softmax,
)
from moe_congestion.errors import InvalidInputError

simplex_points = st.integers(2, 12).flatmap(
    lambda m: st.lists(st.floats(1e-6, 1.0), min_size=m, max_size=m)
).map(lambda xs: np.asarray(xs) / np.sum(xs))


class TestLoadDistribution:
    def test_renormalizes_small_deviation(self):
        w = np.array([0.5, 0.5]) * (1 + 5e-10)
        mu = LoadDistribution(w)
        assert abs(mu.weights.sum() - 1.0) <= 1e-12

    def test_rejects_large_deviation(self):
        with pytest.raises(InvalidInputError):
            LoadDistribution([0.5, 0.6])

    def test_rejects_negative_and_short(self):
        with pytest.raises(InvalidInputError):
            LoadDistribution([1.2, -0.2])
        with pytest.raises(InvalidInputError):
            LoadDistribution([1.0])

    def test_interior_flag(self):
        assert LoadDistribution([0.4, 0.6]).is_interior
        assert not LoadDistribution([1.0, 0.0]).is_interior
        with pytest.raises(InvalidInputError):
            LoadDistribution([1.0, 0.0]).require_interior()

    def test_immutable(self):
        mu = LoadDistribution.uniform(4)
        with pytest.raises(ValueError):
            mu.weights[0] = 0.9


class TestQualityVector:
    def test_rejects_nonfinite(self):
        with pytest.raises(InvalidInputError):
            QualityVector([1.0, np.inf])

    def test_spread(self):
        assert QualityVector([3.0, 1.0, 2.0]).spread == 2.0


class TestGameParams:
    def test_validation(self):
        with pytest.raises(InvalidInputError):
            GameParams(gamma=-1.0, lam=1.0, m=2)
        with pytest.raises(InvalidInputError):
            GameParams(gamma=1.0, lam=0.0, m=2)
        with pytest.raises(InvalidInputError):
            GameParams(gamma=1.0, lam=1.0, m=1)


class TestSoftmax:
    def test_constant_logits_uniform(self):
        np.testing.assert_allclose(softmax([0.0, 0.0, 0.0, 0.0]).weights, 0.25)

    def test_shift_invariance(self):
        a = softmax([1.0, -2.0, 0.5]).weights
        b = softmax([1.0 + 137.0, -2.0 + 137.0, 0.5 + 137.0]).weights
        np.testing.assert_allclose(a, b, atol=1e-15)

    def test_frozen_example(self):
        # exp([1,2,3]) / sum, evaluated directly
        np.testing.assert_allclose(
            softmax([1.0, 2.0, 3.0]).weights,
            [0.09003057, 0.24472847, 0.66524096], atol=5e-9)

    def test_rejects_nonfinite(self):
        with pytest.raises(InvalidInputError):
            softmax([np.nan, 0.0])

    # logit range kept below the float64 exp underflow threshold (~745),
    # outside which strict positivity is unrepresentable
    @given(st.lists(st.floats(-300, 300), min_size=2, max_size=16))
    @settings(deadline=None, max_examples=60)
    def test_sums_to_one_and_positive(self, logits):
        w = softmax(logits).weights
        assert abs(w.sum() - 1.0) <= 1e-12
        assert np.all(w > 0.0)


class TestL1Distance:
    def test_identity_and_maximum(self):
        x = LoadDistribution([0.3, 0.7])
        assert l1_distance(x, x) == 0.0
        assert l1_distance([1.0, 0.0], [0.0, 1.0]) == 2.0

    def test_hand_sum(self):
        assert l1_distance([0.6, 0.4], [0.5, 0.5]) == pytest.approx(0.2)

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            l1_distance([0.5, 0.5], [0.3, 0.3, 0.4])

    @given(simplex_points, simplex_points, simplex_points)
    @settings(deadline=None, max_examples=60)
    def test_metric_axioms(self, a, b, c):
        if not (a.size == b.size == c.size):
            return
        dab, dba = l1_distance(a, b), l1_distance(b, a)
        assert dab == dba
        assert l1_distance(a, c) <= dab + l1_distance(b, c) + 1e-12
        assert l1_distance(a, a) == 0.0
        if dab == 0.0:
            np.testing.assert_array_equal(a, b)


class TestEntropyNormalized:
    def test_uniform_is_exactly_one(self):
        for m in (2, 5, 64):
            assert entropy_normalized(LoadDistribution.uniform(m)) == 1.0

    def test_one_hot_is_zero(self):
        assert entropy_normalized([1.0, 0.0, 0.0]) == 0.0

    def test_frozen_example(self):
        # -sum(mu log mu)/log M = 1.75 bits / 2 bits, base-invariant
        assert entropy_normalized([0.5, 0.25, 0.125, 0.125]) == pytest.approx(0.8750, abs=5e-5)

    @given(simplex_points)
    @settings(deadline=None, max_examples=60)
    def test_below_one_unless_uniform(self, w):
        h = entropy_normalized(w)
        assert 0.0 <= h <= 1.0 + 1e-12
        if np.max(np.abs(w - 1.0 / w.size)) > 1e-6:
            assert h < 1.0


class TestQualitySpread:
    def test_constant_is_zero(self):
        assert quality_spread([2.0, 2.0, 2.0]) == 0.0

    def test_two_experts(self):
        assert quality_spread([1.0, 0.0]) == 1.0

    def test_olmoe_final_fixture(self):
        # layer-average converged quality spread reported for OLMoE
        from moe_congestion.identify import rescale_to_spread

        q = rescale_to_spread(np.random.default_rng(0).standard_normal(64), 2.24)
        assert quality_spread(q) == pytest.approx(2.24, abs=1e-12)
