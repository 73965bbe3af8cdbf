import warnings

import numpy as np
import pytest

from proxyrecon import bayes
from proxyrecon.data import ConfigurationError
from proxyrecon.seeding import Seed


def simulate(seed, n=200, a=0.1, phi=(0.8, -0.15), b=(0.6, -0.4), sd=0.3, K=2):
    rng = seed.generator()
    pcs = rng.standard_normal((n, K))
    y = np.zeros(n)
    for t in range(2, n):
        y[t] = (a + phi[0] * y[t - 1] + phi[1] * y[t - 2]
                + pcs[t] @ np.asarray(b) + sd * rng.standard_normal())
    return y, pcs


def quick_fit(y, pcs, seed, iterations=600, burn_in=300, K=2, ar_order=2):
    spec = bayes.BayesSpec(ar_order=ar_order, K=K,
                           mcmc=bayes.McmcConfig(iterations=iterations,
                                                 burn_in=burn_in, chains=2,
                                                 seed=seed))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return bayes.fit_bayes(y, pcs, spec)


class TestFitBayes:
    def test_recovers_coefficients(self, seed):
        y, pcs = simulate(seed, n=600)
        post = quick_fit(y, pcs, seed, iterations=1500, burn_in=700)
        a, ar, pc, sd = post.posterior_means()
        assert abs(ar[0] - 0.8) < 0.1
        assert abs(ar[1] + 0.15) < 0.1
        assert abs(pc[0] - 0.6) < 0.1
        assert abs(sd - 0.3) < 0.05

    def test_rhat_near_one_on_easy_problem(self, seed):
        y, pcs = simulate(seed, n=400)
        post = quick_fit(y, pcs, seed, iterations=1200, burn_in=600)
        assert all(v < 1.05 for v in post.rhat.values())

    def test_deterministic_per_seed(self, seed):
        y, pcs = simulate(seed)
        p1 = quick_fit(y, pcs, seed)
        p2 = quick_fit(y, pcs, seed)
        assert np.array_equal(p1.intercept, p2.intercept)
        assert np.array_equal(p1.innovation_sd, p2.innovation_sd)

    def test_config_validation(self):
        with pytest.raises(ConfigurationError):
            bayes.McmcConfig(iterations=100, burn_in=100)
        with pytest.raises(ConfigurationError):
            bayes.McmcConfig(chains=1)
        with pytest.raises(ConfigurationError):
            bayes.BayesSpec(ar_order=1)

    def test_too_few_observations(self, seed):
        with pytest.raises(ConfigurationError):
            quick_fit(np.arange(4.0), np.zeros((4, 2)), seed)


class TestBackcast:
    def test_shapes_and_years(self, seed):
        y, pcs = simulate(seed)
        post = quick_fit(y[100:], pcs[100:], seed)
        ens = bayes.backcast_paths(post, pcs[:100], y[100:102], 1000,
                                   seed=seed)
        assert ens.path_draws.shape == (post.n_draws, 100)
        assert ens.years[0] == 1000 and ens.years[-1] == 1099

    def test_deterministic_per_seed(self, seed):
        y, pcs = simulate(seed)
        post = quick_fit(y[100:], pcs[100:], seed)
        e1 = bayes.backcast_paths(post, pcs[:100], y[100:102], 0, seed=seed)
        e2 = bayes.backcast_paths(post, pcs[:100], y[100:102], 0, seed=seed)
        assert np.array_equal(e1.path_draws, e2.path_draws)

    def test_pc_column_mismatch(self, seed):
        y, pcs = simulate(seed)
        post = quick_fit(y, pcs, seed)
        with pytest.raises(ConfigurationError):
            bayes.backcast_paths(post, np.zeros((50, 3)), y[:2], 0, seed=seed)

    def test_missing_scores_rejected(self, seed):
        y, pcs = simulate(seed)
        post = quick_fit(y, pcs, seed)
        bad = pcs[:50].copy()
        bad[10, 0] = np.nan
        with pytest.raises(Exception):
            bayes.backcast_paths(post, bad, y[:2], 0, seed=seed)


class TestUncertaintyDecomposition:
    def test_total_band_widest(self, seed):
        y, pcs = simulate(seed, n=300)
        post = quick_fit(y[100:], pcs[100:], seed, iterations=1200,
                         burn_in=600)
        bands = bayes.decompose_uncertainty(post, pcs[:100], y[100:102], 0,
                                            seed=seed)
        # the full predictive band dominates each frozen component on average
        assert bands.width("total").mean() > bands.width("epsilon_only").mean()
        assert bands.width("total").mean() > bands.width("beta_only").mean()

    def test_band_ordering(self, seed):
        y, pcs = simulate(seed)
        post = quick_fit(y[100:], pcs[100:], seed)
        bands = bayes.decompose_uncertainty(post, pcs[:100], y[100:102], 0,
                                            seed=seed)
        for comp in ("epsilon_only", "beta_only", "total"):
            band = getattr(bands, comp)
            assert np.all(band[:, 0] <= band[:, 1])


class TestSmoothing:
    def _ensemble(self, seed, n_years=100):
        y, pcs = simulate(seed)
        post = quick_fit(y[100:], pcs[100:], seed)
        return bayes.backcast_paths(post, pcs[:n_years], y[100:102], 0,
                                    seed=seed)

    def test_even_window_rejected(self, seed):
        with pytest.raises(ConfigurationError):
            bayes.smooth_paths(self._ensemble(seed), 30)

    def test_window_one_is_identity(self, seed):
        e = self._ensemble(seed)
        assert bayes.smooth_paths(e, 1) is e

    def test_window_longer_than_paths_rejected(self, seed):
        with pytest.raises(ConfigurationError):
            bayes.smooth_paths(self._ensemble(seed), 201)

    def test_preserves_path_means_in_interior(self, seed):
        e = self._ensemble(seed)
        s = bayes.smooth_paths(e, 11)
        # smoothing is an average: interior smoothed values equal the window
        # mean of the raw path
        raw = e.path_draws[0]
        assert abs(s.path_draws[0, 50] - raw[45:56].mean()) < 1e-12

    def test_band_narrows(self, seed):
        e = self._ensemble(seed)
        s = bayes.smooth_paths(e, 11)
        w_raw = bayes.bands_from_ensemble(e)
        w_sm = bayes.bands_from_ensemble(s)
        interior = slice(10, 90)
        assert ((w_sm[interior, 1] - w_sm[interior, 0]).mean()
                < (w_raw[interior, 1] - w_raw[interior, 0]).mean())


class TestEnsembleValidation:
    def test_nonpositive_sd_rejected(self, seed):
        y, pcs = simulate(seed)
        post = quick_fit(y, pcs, seed)
        bad = bayes.Posterior(post.intercept, post.ar_coeffs, post.pc_coeffs,
                              np.zeros_like(post.innovation_sd), post.rhat,
                              post.spec)
        with pytest.raises(ConfigurationError):
            bayes.PosteriorEnsemble(bad, np.zeros((bad.n_draws, 5)), 0)
