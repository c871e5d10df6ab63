import numpy as np
import pytest
from scipy import stats as scipy_stats
from sklearn.linear_model import LogisticRegression

from imkws.stream import (
    StreamBatch,
    StreamConfig,
    _synth_sample,
    class_probabilities,
    generate_stream,
    load_feature_csv,
    make_class_templates,
    mix_noise_at_snr,
    sample_example,
    save_feature_csv,
)


def philox(seed):
    return np.random.Generator(np.random.Philox(seed))


class TestStreamConfig:
    def test_defaults_are_valid(self):
        cfg = StreamConfig()
        assert cfg.n_classes == 4 and cfg.batch_size == 128

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"ratio": 0.5},
            {"batch_size": 0},
            {"n_classes": 1},
            {"T": 0},
            {"noise_mode": "pink"},
            {"within_class_std": -1.0},
        ],
    )
    def test_validation(self, kwargs):
        with pytest.raises(ValueError):
            StreamConfig(**kwargs)

    def test_file_round_trip(self, tmp_path):
        cfg = StreamConfig(ratio=6.0, snr_db=0.0, seed=3, T=16, F=12)
        path = tmp_path / "stream.json"
        cfg.to_file(path)
        assert StreamConfig.from_file(path) == cfg

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"n_classes": 4, "ratio": 8, "snr_db": -10, "n_batches": 2, '
                        '"batch_size": 4, "T": 8, "F": 6, "seed": 0, "bogus": 1}')
        with pytest.raises(ValueError, match="unknown"):
            StreamConfig.from_file(path)

    def test_missing_key_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"n_classes": 4}')
        with pytest.raises(ValueError, match="missing"):
            StreamConfig.from_file(path)


class TestClassProbabilities:
    def test_ratio_eight(self):
        p = class_probabilities(4, 8.0)
        np.testing.assert_allclose(p[-1], 8.0 / 9.0, atol=1e-15)
        np.testing.assert_allclose(p[:3], np.full(3, 1.0 / 27.0), atol=1e-15)
        assert p.sum() == pytest.approx(1.0, abs=1e-12)

    def test_ratio_one(self):
        p = class_probabilities(4, 1.0)
        np.testing.assert_allclose(p, [1 / 6, 1 / 6, 1 / 6, 1 / 2], atol=1e-15)


class TestTemplates:
    def test_same_seed_identical(self):
        a = make_class_templates(4, 8, 6, seed=5)
        b = make_class_templates(4, 8, 6, seed=5)
        np.testing.assert_array_equal(a, b)

    def test_pairwise_margin_holds(self):
        templates = make_class_templates(4, 16, 12, seed=6, margin=10.0)
        for i in range(4):
            for j in range(i + 1, 4):
                assert np.linalg.norm(templates[i] - templates[j]) >= 10.0

    def test_unattainable_margin_errors(self):
        with pytest.raises(ValueError, match="pairwise"):
            make_class_templates(4, 2, 2, seed=7, margin=1e6, max_retries=5)

    def test_linear_separability_oracle(self):
        templates = make_class_templates(4, 8, 6, seed=8)
        rng = philox(9)
        X, y = [], []
        for cls in range(4):
            for _ in range(50):
                X.append(sample_example(templates, cls, 0.1, rng).ravel())
                y.append(cls)
        clf = LogisticRegression(max_iter=2000).fit(np.array(X), np.array(y))
        assert clf.score(np.array(X), np.array(y)) > 0.95


class TestSampleExample:
    def test_zero_std_returns_template(self):
        templates = make_class_templates(3, 4, 5, seed=10)
        np.testing.assert_array_equal(sample_example(templates, 1, 0.0, philox(0)), templates[1])

    def test_sample_mean_concentrates_on_template(self):
        templates = make_class_templates(2, 4, 5, seed=11)
        rng = philox(12)
        sigma = 0.5
        draws = np.stack([sample_example(templates, 0, sigma, rng) for _ in range(10_000)])
        np.testing.assert_allclose(draws.mean(axis=0), templates[0], atol=3 * sigma / 100)

    def test_deterministic_under_fixed_substream(self):
        templates = make_class_templates(2, 4, 5, seed=13)
        a = sample_example(templates, 0, 0.3, philox(14))
        b = sample_example(templates, 0, 0.3, philox(14))
        np.testing.assert_array_equal(a, b)

    def test_bad_class_rejected(self):
        templates = make_class_templates(2, 4, 5, seed=15)
        with pytest.raises(ValueError):
            sample_example(templates, 5, 0.1, philox(0))


class TestMixNoise:
    def test_equal_power_at_zero_db(self):
        rng = philox(16)
        x = rng.normal(size=(8, 6))
        noise = rng.normal(size=(8, 6))
        mixed = mix_noise_at_snr(x, noise, snr_db=0.0)
        p_signal = np.mean(x**2)
        p_added = np.mean((mixed - x) ** 2)
        assert p_added == pytest.approx(p_signal, rel=1e-9)

    def test_ten_db_power_ratio(self):
        rng = philox(17)
        x = rng.normal(size=(8, 6))
        noise = rng.normal(size=(8, 6))
        mixed = mix_noise_at_snr(x, noise, snr_db=10.0)
        ratio = np.mean(x**2) / np.mean((mixed - x) ** 2)
        assert ratio == pytest.approx(10.0, rel=1e-9)

    def test_closed_form_scale_at_minus_ten_db(self):
        # Unit-power signal and noise: the scale must be sqrt(10).
        x = np.ones((4, 4))
        noise = np.tile([1.0, -1.0], (4, 2))
        mixed = mix_noise_at_snr(x, noise, snr_db=-10.0)
        np.testing.assert_allclose(mixed - x, np.sqrt(10.0) * noise, atol=1e-12)

    def test_zero_noise_rejected(self):
        with pytest.raises(ValueError, match="zero power"):
            mix_noise_at_snr(np.ones((2, 2)), np.zeros((2, 2)), 0.0)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            mix_noise_at_snr(np.ones((2, 2)), np.ones((2, 3)), 0.0)


class TestGenerateStream:
    def small_config(self, **kwargs):
        defaults = dict(n_classes=4, ratio=8.0, snr_db=-10.0, n_batches=4, batch_size=32, T=8, F=6, seed=0)
        defaults.update(kwargs)
        return StreamConfig(**defaults)

    def test_bit_identical_for_same_seed(self):
        cfg = self.small_config()
        templates = make_class_templates(4, 8, 6, seed=20)
        a = list(generate_stream(cfg, templates))
        b = list(generate_stream(cfg, templates))
        for ba, bb in zip(a, b):
            np.testing.assert_array_equal(ba.grids, bb.grids)
            np.testing.assert_array_equal(ba.labels, bb.labels)
            assert ba.batch_index == bb.batch_index

    def test_imbalance_ratio_eight(self):
        cfg = self.small_config(n_batches=100, batch_size=100, seed=21)
        templates = make_class_templates(4, 8, 6, seed=20)
        labels = np.concatenate([b.labels for b in generate_stream(cfg, templates)])
        frac_nonkw = np.mean(labels == 3)
        assert abs(frac_nonkw - 8.0 / 9.0) < 0.02

    def test_imbalance_ratio_one(self):
        cfg = self.small_config(ratio=1.0, n_batches=100, batch_size=100, seed=22)
        templates = make_class_templates(4, 8, 6, seed=20)
        labels = np.concatenate([b.labels for b in generate_stream(cfg, templates)])
        for cls in range(3):
            assert abs(np.mean(labels == cls) - 1.0 / 6.0) < 0.02

    def test_chi_square_goodness_of_fit(self):
        cfg = self.small_config(n_batches=100, batch_size=100, seed=23)
        templates = make_class_templates(4, 8, 6, seed=20)
        labels = np.concatenate([b.labels for b in generate_stream(cfg, templates)])
        counts = np.bincount(labels, minlength=4)
        expected = len(labels) * np.array([1 / 27, 1 / 27, 1 / 27, 8 / 9])
        result = scipy_stats.chisquare(counts, expected)
        assert result.pvalue > 0.01

    def test_snr_holds_for_emitted_samples(self):
        cfg = self.small_config(seed=24)
        templates = make_class_templates(4, 8, 6, seed=20)
        rng = philox(25)
        for _ in range(100):
            clean, noisy = _synth_sample(templates, int(rng.integers(0, 4)), cfg, rng)
            p_signal = np.mean(clean**2)
            p_noise = np.mean((noisy - clean) ** 2)
            assert 10.0 * np.log10(p_signal / p_noise) == pytest.approx(-10.0, abs=1e-9)

    def test_template_shape_mismatch_rejected(self):
        cfg = self.small_config()
        with pytest.raises(ValueError):
            next(generate_stream(cfg, make_class_templates(4, 5, 5, seed=1)))

    def test_batch_invariants(self):
        cfg = self.small_config(seed=26)
        templates = make_class_templates(4, 8, 6, seed=20)
        for i, batch in enumerate(generate_stream(cfg, templates)):
            assert batch.batch_index == i
            assert batch.grids.shape == (32, 8, 6)
            assert batch.labels.shape == (32,)

    def test_white_noise_mode(self):
        cfg = self.small_config(noise_mode="white", seed=27)
        templates = make_class_templates(4, 8, 6, seed=20)
        batches = list(generate_stream(cfg, templates))
        assert len(batches) == 4


class TestStreamBatch:
    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            StreamBatch(grids=np.zeros((3, 2, 2)), labels=np.zeros(2, dtype=int), batch_index=0)


class TestFeatureCsv:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        assert load_feature_csv(path) == []

    def test_header_only(self, tmp_path):
        path = tmp_path / "header.csv"
        path.write_text("label,T,F\n")
        assert load_feature_csv(path) == []

    def test_round_trip_bit_exact(self, tmp_path):
        rng = philox(30)
        grids = [rng.normal(size=(3, 4)) for _ in range(5)]
        labels = [0, 1, -1, 2, 3]
        path = tmp_path / "grids.csv"
        save_feature_csv(path, grids, labels)
        loaded = load_feature_csv(path)
        assert [lbl for _, lbl in loaded] == labels
        for (grid, _), original in zip(loaded, grids):
            np.testing.assert_array_equal(grid, original)

    def test_short_row_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("label,T,F,v0,v1,v2,v3\n0,2,2,1.0,2.0,3.0,4.0\n1,2,2,1.0,2.0,3.0\n")
        with pytest.raises(ValueError, match="line 3"):
            load_feature_csv(path)

    def test_dimension_mismatch_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("label,T,F,v0,v1,v2,v3\n0,2,2,1.0,2.0,3.0,4.0\n1,1,4,1.0,2.0,3.0,4.0\n")
        with pytest.raises(ValueError, match="line 3"):
            load_feature_csv(path)

    def test_non_numeric_value_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("label,T,F,v0,v1,v2,v3\n0,2,2,1.0,x,3.0,4.0\n")
        with pytest.raises(ValueError, match="line 2"):
            load_feature_csv(path)
