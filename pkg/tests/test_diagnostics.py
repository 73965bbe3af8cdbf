import numpy as np
import pytest

from proxyrecon import diagnostics as dg
from proxyrecon.data import ConfigurationError, DegenerateSeriesError
from proxyrecon.seeding import Seed
from conftest import ar1_series, make_series


class TestSeriesStats:
    def test_alternating_series_lag1_is_minus_one(self):
        s = make_series([1.0, -1.0] * 20)
        st = dg.series_stat(s, "lag1_autocorr")
        assert abs(st.value + 1.0) < 1e-12

    def test_ar1_lag1_near_phi(self):
        s = ar1_series(5000, 0.5, seed=1)
        st = dg.series_stat(s, "lag1_autocorr")
        assert abs(st.value - 0.5) < 0.05

    def test_corr_with_target_self_is_one(self):
        s = ar1_series(200, 0.3, seed=2)
        st = dg.series_stat(s, "corr_with_target", target=s)
        assert abs(st.value - 1.0) < 1e-12

    def test_corr_aligns_on_shared_nonmissing_years(self):
        v = np.arange(50.0)
        a = make_series(v)
        w = v.copy()
        w[10] = np.nan
        b = make_series(w)
        st = dg.series_stat(b, "corr_with_target", target=a)
        assert abs(st.value - 1.0) < 1e-12

    def test_sd_first_diff_standardized(self):
        s = ar1_series(2000, 0.9, seed=3)
        st = dg.series_stat(s, "sd_first_diff_standardized")
        # smooth (persistent) series have small standardized first differences
        assert st.value < 0.7

    def test_constant_series_degenerate(self):
        with pytest.raises(DegenerateSeriesError):
            dg.series_stat(make_series(np.ones(30)), "lag1_autocorr")

    def test_too_short(self):
        with pytest.raises(DegenerateSeriesError):
            dg.series_stat(make_series(np.arange(5.0)), "lag1_autocorr")

    def test_unknown_stat(self):
        with pytest.raises(ConfigurationError):
            dg.series_stat(ar1_series(50, 0.1), "kurtosis")

    def test_corr_requires_target(self):
        with pytest.raises(ConfigurationError):
            dg.series_stat(ar1_series(50, 0.1), "corr_with_target")


class TestAcfPacf:
    def test_ar1_signature(self):
        s = ar1_series(8000, 0.6, seed=4)
        acf, pacf = dg.acf_pacf(s, 5)
        assert abs(acf[0] - 0.6) < 0.05
        assert abs(acf[1] - 0.36) < 0.05
        assert abs(pacf[0] - 0.6) < 0.05
        assert abs(pacf[1]) < 0.05  # AR(1): partial dies after lag 1

    def test_series_too_short(self):
        with pytest.raises(ConfigurationError):
            dg.acf_pacf(ar1_series(20, 0.2), 15)


class TestBootstrap:
    def test_indices_cover_and_are_valid(self):
        rng = Seed(1).generator()
        idx = dg.stationary_bootstrap_indices(100, 10, rng)
        assert idx.shape == (100,)
        assert idx.min() >= 0 and idx.max() < 100

    def test_long_block_is_identity(self):
        rng = Seed(1).generator()
        idx = dg.stationary_bootstrap_indices(50, 50, rng)
        assert np.array_equal(idx, np.arange(50))

    def test_null_deterministic_per_seed(self):
        s = [ar1_series(120, 0.4, seed=5), ar1_series(120, 0.4, seed=6)]
        a = dg.bootstrap_null(s, "lag1_autocorr", 10, 8, Seed(2))
        b = dg.bootstrap_null(s, "lag1_autocorr", 10, 8, Seed(2))
        assert np.array_equal(a, b)
        assert a.shape == (16,)

    def test_null_centers_near_statistic(self):
        s = ar1_series(2000, 0.6, seed=7)
        sample = dg.bootstrap_null(s, "lag1_autocorr", 50, 50, Seed(3))
        real = dg.series_stat(s, "lag1_autocorr").value
        assert abs(np.median(sample) - real) < 0.1

    def test_invalid_params(self):
        s = ar1_series(100, 0.2)
        with pytest.raises(ConfigurationError):
            dg.bootstrap_null(s, "lag1_autocorr", 0, 5, Seed(0))
        with pytest.raises(ConfigurationError):
            dg.bootstrap_null(s, "lag1_autocorr", 5, 0, Seed(0))


class TestQqCompare:
    def test_identical_samples(self):
        x = np.random.default_rng(1).normal(size=500)
        rpt = dg.qq_compare(x, x)
        assert rpt.ks_distance == 0.0
        assert np.allclose(rpt.reference_quantiles, rpt.test_quantiles)

    def test_shifted_samples_detected(self):
        rng = np.random.default_rng(2)
        rpt = dg.qq_compare(rng.normal(0, 1, 500), rng.normal(2, 1, 500))
        assert rpt.ks_distance > 0.5
        assert np.all(rpt.test_quantiles > rpt.reference_quantiles - 0.5)

    def test_band_envelope(self):
        rng = np.random.default_rng(3)
        ref = rng.normal(size=400)
        boots = [rng.choice(ref, ref.size) for _ in range(50)]
        rpt = dg.qq_compare(ref, ref, band_samples=boots)
        assert rpt.band.shape == (99, 2)
        inside = ((rpt.band[:, 0] <= rpt.reference_quantiles)
                  & (rpt.reference_quantiles <= rpt.band[:, 1]))
        assert inside.mean() > 0.8

    def test_empty_sample_rejected(self):
        with pytest.raises(ConfigurationError):
            dg.qq_compare([], [1.0])
