import numpy as np
import pytest

from imkws.augment import MaskPolicy, apply_policy, freq_mask, make_views, time_mask


def philox(seed):
    return np.random.Generator(np.random.Philox(seed))


def grid(t=10, f=4):
    # strictly positive so zeroed cells are unambiguous
    return np.arange(t * f, dtype=float).reshape(t, f) + 1.0


class TestTimeMask:
    def test_zero_masks_is_identity(self):
        x = grid()
        out = time_mask(x, max_len=3, n=0, rng=philox(0))
        np.testing.assert_array_equal(out, x)

    def test_zero_length_draw_is_identity(self):
        # Philox(0) draws length 0 at max_len=1 (verified by replaying the stream).
        assert int(philox(0).integers(0, 2)) == 0
        x = grid()
        out = time_mask(x, max_len=1, n=1, rng=philox(0))
        np.testing.assert_array_equal(out, x)

    def test_golden_pin_seed42(self):
        # Regression pin from the first inspected run: length 3 at start 0.
        x = grid(10, 4)
        out = time_mask(x, max_len=3, n=1, rng=philox(42))
        expected = x.copy()
        expected[0:3, :] = 0.0
        np.testing.assert_array_equal(out, expected)

    def test_input_untouched(self):
        x = grid()
        before = x.copy()
        time_mask(x, max_len=3, n=2, rng=philox(1))
        np.testing.assert_array_equal(x, before)

    def test_rejects_overlong_mask(self):
        with pytest.raises(ValueError):
            time_mask(grid(5, 3), max_len=6, n=1, rng=philox(0))


class TestFreqMask:
    def test_zero_masks_is_identity(self):
        x = grid()
        np.testing.assert_array_equal(freq_mask(x, max_len=2, n=0, rng=philox(0)), x)

    def test_full_width_mask(self):
        # Philox(2) draws the full width 4 at max_len=F=4; start is forced to 0.
        assert int(philox(2).integers(0, 5)) == 4
        x = grid(6, 4)
        out = freq_mask(x, max_len=4, n=1, rng=philox(2))
        np.testing.assert_array_equal(out, np.zeros_like(x))

    def test_golden_pin_seed7(self):
        x = grid(10, 4)
        out = freq_mask(x, max_len=3, n=1, rng=philox(7))
        expected = x.copy()
        expected[:, 1:2] = 0.0
        np.testing.assert_array_equal(out, expected)

    def test_rejects_overlong_mask(self):
        with pytest.raises(ValueError):
            freq_mask(grid(5, 3), max_len=4, n=1, rng=philox(0))


class TestMaskProperties:
    def test_changed_cells_are_exactly_the_drawn_bands(self):
        # Replay the generator stream to derive the bands independently.
        for seed in range(25):
            x = grid(12, 7)
            out = time_mask(x, max_len=5, n=3, rng=philox(seed))
            replay = philox(seed)
            expected_rows = set()
            for _ in range(3):
                length = int(replay.integers(0, 6))
                start = int(replay.integers(0, 12 - length + 1))
                expected_rows.update(range(start, start + length))
            changed_rows = {i for i in range(12) if not np.array_equal(out[i], x[i])}
            assert changed_rows <= expected_rows
            for i in expected_rows:
                np.testing.assert_array_equal(out[i], np.zeros(7))
            for i in set(range(12)) - expected_rows:
                np.testing.assert_array_equal(out[i], x[i])

    def test_masking_never_amplifies(self):
        rng = philox(3)
        x = rng.normal(size=(20, 8))
        out = apply_policy(x, MaskPolicy(2, 5, 2, 3), philox(4))
        assert np.all(np.abs(out) <= np.abs(x) + 0.0)

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            MaskPolicy(n_time_masks=-1)
        with pytest.raises(ValueError):
            MaskPolicy(max_freq_len=0)


class TestMakeViews:
    def test_empty_policy_returns_input(self):
        x = grid(25, 8)
        policy = MaskPolicy(n_time_masks=0, max_time_len=1, n_freq_masks=0, max_freq_len=1)
        for view in make_views(x, policy, philox(0)):
            np.testing.assert_array_equal(view, x)

    def test_deterministic_given_generator_state(self):
        x = grid(25, 8)
        policy = MaskPolicy(2, 6, 2, 3)
        a = make_views(x, policy, philox(11))
        b = make_views(x, policy, philox(11))
        for va, vb in zip(a, b):
            np.testing.assert_array_equal(va, vb)

    def test_views_use_distinct_substreams(self):
        # x_tilde should differ from x_hat essentially always.
        policy = MaskPolicy(2, 6, 2, 3)
        rng_data = philox(99)
        coincidences = 0
        for seed in range(100):
            x = rng_data.normal(size=(25, 8))
            x_tilde, x_hat, _ = make_views(x, policy, philox(seed))
            if np.array_equal(x_tilde, x_hat):
                coincidences += 1
        assert coincidences <= 2

    def test_prime_view_differs_too(self):
        policy = MaskPolicy(2, 6, 2, 3)
        x = philox(5).normal(size=(25, 8))
        x_tilde, x_hat, x_prime = make_views(x, policy, philox(6))
        assert not np.array_equal(x_prime, x_tilde) or not np.array_equal(x_prime, x_hat)
