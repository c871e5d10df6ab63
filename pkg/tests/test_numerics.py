import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imkws.numerics import entropy, log_sum_exp, softmax

# Extended-precision direct-summation value (mpmath, 50 digits).
LSE_123 = 3.4076059644443803045


class TestLogSumExp:
    def test_symmetric_pair(self):
        assert log_sum_exp([0.0, 0.0]) == pytest.approx(np.log(2.0), abs=1e-12)

    def test_no_overflow_on_huge_logits(self):
        assert log_sum_exp([1000.0, 1000.0]) == pytest.approx(1000.0 + np.log(2.0), abs=1e-9)

    def test_matches_direct_summation_oracle(self):
        assert log_sum_exp([1.0, 2.0, 3.0]) == pytest.approx(LSE_123, rel=1e-12)

    def test_bounds(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            z = rng.uniform(-10, 10, size=rng.integers(2, 8))
            v = log_sum_exp(z)
            assert z.max() <= v <= z.max() + np.log(len(z)) + 1e-12

    @pytest.mark.parametrize("bad", [[np.nan, 0.0], [np.inf, 1.0], [1.0, -np.inf]])
    def test_rejects_non_finite(self, bad):
        with pytest.raises(ValueError):
            log_sum_exp(bad)

    def test_rejects_single_class(self):
        with pytest.raises(ValueError):
            log_sum_exp([1.0])

    @given(
        st.lists(st.floats(-10, 10), min_size=2, max_size=8),
        st.floats(-1e3, 1e3),
    )
    @settings(max_examples=200, deadline=None)
    def test_shift_property(self, z, c):
        z = np.array(z)
        np.testing.assert_allclose(log_sum_exp(z + c), log_sum_exp(z) + c, rtol=1e-12, atol=1e-12)


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax([0.0, 0.0, 0.0]), np.full(3, 1 / 3), atol=1e-15)

    def test_temperature_half(self):
        np.testing.assert_allclose(softmax([2.0, 1.0], tau=0.5), [0.880797078, 0.119202922], atol=1e-9)

    def test_large_temperature_approaches_uniform(self):
        np.testing.assert_allclose(softmax([5.0, 1.0, 1.0], tau=1e6), np.full(3, 1 / 3), atol=1e-5)

    @pytest.mark.parametrize("tau", [0.0, -1.0])
    def test_rejects_nonpositive_temperature(self, tau):
        with pytest.raises(ValueError):
            softmax([1.0, 2.0], tau=tau)

    def test_batched_rows_sum_to_one(self):
        rng = np.random.default_rng(1)
        z = rng.uniform(-10, 10, size=(64, 4))
        p = softmax(z, tau=0.7)
        np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)
        assert np.all(p >= 0)

    @given(
        st.lists(st.floats(-10, 10), min_size=2, max_size=8),
        st.floats(-1e3, 1e3),
        st.floats(0.1, 10.0),
    )
    @settings(max_examples=200, deadline=None)
    def test_shift_invariance(self, z, c, tau):
        z = np.array(z)
        np.testing.assert_allclose(softmax(z + c, tau), softmax(z, tau), atol=1e-12)


class TestEntropy:
    def test_uniform_four_classes(self):
        assert entropy(np.full(4, 0.25)) == pytest.approx(np.log(4.0), abs=1e-12)

    def test_one_hot_is_zero(self):
        assert entropy([1.0, 0.0, 0.0]) == 0.0

    def test_coin_flip(self):
        assert entropy([0.5, 0.5]) == pytest.approx(np.log(2.0), abs=1e-12)

    def test_range(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            z = rng.uniform(-10, 10, size=4)
            h = entropy(softmax(z))
            assert -1e-12 <= h <= np.log(4.0) + 1e-12

    def test_rejects_invalid_probabilities(self):
        with pytest.raises(ValueError):
            entropy([0.7, 0.7])
        with pytest.raises(ValueError):
            entropy([-0.1, 1.1])

    def test_decomposition_identity(self):
        # entropy(softmax(z)) == -sum p_i z_i + log_sum_exp(z)
        rng = np.random.default_rng(3)
        for _ in range(1000):
            z = rng.uniform(-10, 10, size=4)
            p = softmax(z)
            lhs = entropy(p)
            rhs = -(p * z).sum() + log_sum_exp(z)
            assert abs(lhs - rhs) < 1e-9
