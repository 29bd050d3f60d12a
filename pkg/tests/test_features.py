from unittest import TestCase
import math
import warnings

import numpy as np

from turbinewatch.dataset import TimeSeriesDataset
from turbinewatch.exceptions import (
    CompatibilityException,
    ConfigurationException,
    DataException,
    SizeException,
    StateException,
)
from turbinewatch.features import (
    Column,
    FeatureConfig,
    FeatureMatrix,
    Normalizer,
    apply_normalizer,
    build_feature_matrix,
    denormalize,
    derivatives,
    fft_features,
    fit_normalizer,
    impute,
    moving_average,
    moving_std,
    skew_kurt,
    windowed_fft_features,
    windowed_skew_kurt,
)
from tests.fixtures import START, make_dataset


def naive_band_energy(window, bands):
    """Direct DFT, no FFT."""
    w = len(window)
    x = np.asarray(window, dtype=float) - np.mean(window)
    magnitude = []
    for k in range(1, w // 2 + 1):
        re = sum(x[t] * math.cos(2 * math.pi * k * t / w) for t in range(w))
        im = -sum(x[t] * math.sin(2 * math.pi * k * t / w) for t in range(w))
        magnitude.append(math.hypot(re, im))
    chunks = np.array_split(np.array(magnitude), bands)
    return [float(np.sum(c**2)) for c in chunks], int(np.argmax(magnitude)) + 1


class TestKernels(TestCase):
    def test_moving_average_and_std(self):
        x = np.array([1.0, 2.0, 3.0, 4.0, 10.0])
        assert moving_average(x, 2).tolist() == [1.5, 2.5, 3.5, 7.0]
        assert np.allclose(moving_std(x, 3), [np.std(x[i : i + 3]) for i in range(3)])

        with self.assertRaises(SizeException):
            moving_average(x, 6)

    def test_moving_stats_against_per_window_sums(self):
        g = np.random.default_rng(12)
        for n in (1, 7, 300, 2048):
            x = 50.0 + 10.0 * g.standard_normal(n)
            for w in {1, min(n, 6), min(n, 36), min(n, 144)}:
                means, stds = [], []
                for i in range(n - w + 1):
                    window = x[i : i + w].tolist()
                    mean = math.fsum(window) / w
                    means.append(mean)
                    stds.append(math.sqrt(math.fsum((v - mean) ** 2 for v in window) / w))
                assert np.max(np.abs(moving_average(x, w) - means)) < 1e-10, (n, w)
                assert np.max(np.abs(moving_std(x, w) - stds)) < 1e-10, (n, w)

    def test_derivatives(self):
        first, second = derivatives(np.array([1.0, 4.0, 9.0, 16.0]))
        assert first.tolist() == [3.0, 5.0, 7.0]
        assert second.tolist() == [2.0, 2.0]

        with self.assertRaises(SizeException):
            derivatives(np.array([1.0, 2.0]))

    def test_skew_kurt(self):
        window = np.array([1.0, 2.0, 2.0, 3.0, 9.0, 4.0])
        centered = window - window.mean()
        m2, m3, m4 = [(centered**k).mean() for k in (2, 3, 4)]

        stats = skew_kurt(window)
        assert math.isclose(stats.skewness, m3 / m2**1.5, rel_tol=1e-12)
        assert math.isclose(stats.kurtosis, m4 / m2**2, rel_tol=1e-12)
        assert not stats.degenerate

    def test_skew_kurt_constant(self):
        stats = skew_kurt(np.full(8, 5.0))
        assert stats == (0.0, 0.0, True)

    def test_flat_windows_do_not_warn(self):
        x = np.r_[np.full(40, 1200.0), 1200.0 + 1e-9 * np.arange(20), np.linspace(0, 1, 20)]
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            skewness, kurtosis, degenerate = windowed_skew_kurt(x, 8)
        assert caught == []
        assert degenerate[0] and skewness[0] == 0.0 and kurtosis[0] == 0.0
        assert np.all(np.isfinite(skewness)) and np.all(np.isfinite(kurtosis))

    def test_fft_against_direct_dft(self):
        g = np.random.default_rng(3)
        for w, bands in [(8, 4), (16, 4), (16, 3), (32, 1)]:
            window = g.standard_normal(w)
            expected_energy, expected_bin = naive_band_energy(window, bands)
            spectrum = fft_features(window, bands)
            assert np.allclose(spectrum.band_energy, expected_energy)
            assert spectrum.dominant_bin == expected_bin

    def test_fft_against_dft_matrix(self):
        g = np.random.default_rng(4)
        for w in [8, 16, 32, 64, 128, 256, 512, 1024]:
            window = g.standard_normal(w)
            x = window - window.mean()
            k = np.arange(1, w // 2 + 1)[:, None]
            basis = np.exp(-2j * np.pi * k * np.arange(w) / w)
            magnitude = np.abs(basis @ x)
            expected = [np.sum(c**2) for c in np.array_split(magnitude, 4)]
            spectrum = fft_features(window, 4)
            np.testing.assert_allclose(spectrum.band_energy, expected, rtol=1e-9)
            assert spectrum.dominant_bin == int(np.argmax(magnitude)) + 1

    def test_fft_dominant_bin_of_a_sinusoid(self):
        t = np.arange(16)
        spectrum = fft_features(5.0 + np.sin(2 * np.pi * 3 * t / 16), 4)
        assert spectrum.dominant_bin == 3
        # energy of 16/2 squared lands in band 2 (bins 3 and 4)
        assert math.isclose(spectrum.band_energy[1], 64.0, rel_tol=1e-9)

    def test_fft_checks(self):
        with self.assertRaises(ConfigurationException):
            windowed_fft_features(np.zeros(20), 12, 2)

        with self.assertRaises(ConfigurationException):
            windowed_fft_features(np.zeros(20), 8, 5)

    def test_impute(self):
        values = np.array([[np.nan, 1.0], [2.0, np.nan], [np.nan, 3.0]])
        assert impute(values, ["a", "b"]).tolist() == [[2.0, 1.0], [2.0, 1.0], [2.0, 3.0]]

        with self.assertRaises(DataException):
            impute(np.array([[np.nan, 1.0]]), ["a", "b"])


class TestFeatureMatrix(TestCase):
    def test_layout(self):
        ds = make_dataset(n=40, d=2)
        cfg = FeatureConfig(window=8, fft_bands=2)
        fm = build_feature_matrix(ds, cfg)

        assert len(fm) == 33
        assert fm.row_index[0] == 7 and fm.row_index[-1] == 39
        assert len(fm.columns) == 2 * (8 + 2)
        assert fm.column_names[:3] == ["temp_00:raw", "temp_00:mean", "temp_00:std"]
        assert fm.column_names[-1] == "temp_01:dominant_bin"

    def test_values_match_windows(self):
        ds = make_dataset(n=30, d=1)
        cfg = FeatureConfig(window=8, fft_bands=4)
        fm = build_feature_matrix(ds, cfg)
        x = ds.values[:, 0]
        names = fm.column_names

        row = 5
        t = fm.row_index[row]
        window = x[t - 7 : t + 1]
        assert fm.rows[row, names.index("temp_00:raw")] == x[t]
        assert math.isclose(fm.rows[row, names.index("temp_00:mean")], window.mean())
        assert math.isclose(fm.rows[row, names.index("temp_00:diff1")], x[t] - x[t - 1])
        assert math.isclose(
            fm.rows[row, names.index("temp_00:diff2")], x[t] - 2 * x[t - 1] + x[t - 2]
        )
        energy, dominant = naive_band_energy(window, 4)
        assert math.isclose(fm.rows[row, names.index("temp_00:band_1")], energy[0])
        assert fm.rows[row, names.index("temp_00:dominant_bin")] == dominant

    def test_first_row_derivatives_are_padded(self):
        ds = make_dataset(n=10, d=1)
        fm = build_feature_matrix(ds, FeatureConfig(window=2, statistical=False, frequency=False))
        x = ds.values[:, 0]
        assert fm.column_names == ["temp_00:raw", "temp_00:mean", "temp_00:std", "temp_00:diff1", "temp_00:diff2"]
        # row at t=1 only has x0 before it, so x_{-1} repeats x0
        assert math.isclose(fm.rows[0, 4], x[1] - 2 * x[0] + x[0])

    def test_rows_never_span_gaps(self):
        base = make_dataset(n=40, d=1)
        keep = np.r_[0:15, 20:40]
        ds = TimeSeriesDataset(START, 600.0, base.values[keep], ["temp_00"], index=keep)
        fm = build_feature_matrix(ds, FeatureConfig(window=8, fft_bands=2))

        assert fm.row_index.tolist() == list(range(7, 15)) + list(range(27, 40))

    def test_too_short(self):
        with self.assertRaises(SizeException):
            build_feature_matrix(make_dataset(n=5, d=1), FeatureConfig(window=8))

    def test_config_validation(self):
        for cfg in [
            FeatureConfig(window=1),
            FeatureConfig(window=12),
            FeatureConfig(window=8, fft_bands=5),
            FeatureConfig(window=2, frequency=False),
        ]:
            with self.assertRaises(ConfigurationException):
                cfg.validate()

        FeatureConfig(window=12, frequency=False).validate()

    def test_frame(self):
        fm = build_feature_matrix(make_dataset(n=20, d=2), FeatureConfig(window=4, fft_bands=2))
        frame = fm.to_frame()
        assert frame.columns[0] == "row_index"
        back = FeatureMatrix.from_frame(frame)
        assert back.columns == fm.columns
        assert np.array_equal(back.rows, fm.rows)

    def test_column_parse(self):
        assert Column.parse("gear:oil:temp:mean") == Column("gear:oil:temp", "mean")
        with self.assertRaises(DataException):
            Column.parse("mean")

    def test_non_finite_rows(self):
        with self.assertRaises(DataException):
            FeatureMatrix(np.array([[np.inf]]), np.array([0]), [Column("a", "raw")])


class TestNormalizer(TestCase):
    def setUp(self):
        self.columns = [Column("a", "raw"), Column("b", "raw")]
        rows = np.column_stack([np.arange(10.0), np.full(10, 4.0)])
        self.fm = FeatureMatrix(rows, np.arange(10), self.columns)

    def test_fit_and_apply(self):
        norm = fit_normalizer(self.fm)
        assert norm.fitted_on == 10
        z = apply_normalizer(norm, self.fm)

        assert math.isclose(z.rows[:, 0].mean(), 0.0, abs_tol=1e-12)
        assert math.isclose(z.rows[:, 0].std(), 1.0)
        # constant columns map to 0
        assert np.all(z.rows[:, 1] == 0)
        assert np.allclose(denormalize(norm, z).rows, self.fm.rows)

    def test_serialization(self):
        norm = Normalizer.from_dict(fit_normalizer(self.fm).to_dict())
        assert norm.columns == ["a:raw", "b:raw"]
        assert np.allclose(apply_normalizer(norm, self.fm).rows[:, 0], (np.arange(10) - 4.5) / np.arange(10).std())

    def test_checks(self):
        with self.assertRaises(StateException):
            apply_normalizer(Normalizer(), self.fm)

        with self.assertRaises(SizeException):
            fit_normalizer(FeatureMatrix(self.fm.rows[:1], [0], self.columns))

        other = FeatureMatrix(self.fm.rows, self.fm.row_index, [Column("b", "raw"), Column("a", "raw")])
        with self.assertRaises(CompatibilityException):
            apply_normalizer(fit_normalizer(self.fm), other)
