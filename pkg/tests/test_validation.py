import numpy as np
import pytest

from proxyrecon import validation as va
from proxyrecon.data import ConfigurationError
from proxyrecon.pseudoproxy import TingleyConfig, gen_ar2_series, gen_tingley
from proxyrecon.seeding import Seed
from conftest import make_matrix, make_series


def signal_setup(seed, n=120, n_series=5, noise=0.1, start_year=1880):
    y = gen_ar2_series(n, seed=seed.derive("y"), start_year=start_year)
    X = gen_tingley(y, TingleyConfig(sigma_omega=noise, n_series=n_series),
                    seed.derive("X"))
    return X, y


class TestMakeScheme:
    def test_all_modes(self):
        s = va.make_scheme((1900, 1999), 25)
        assert [b.mode for b in s.blocks] == ["front", "interior",
                                              "interior", "back"]

    def test_interpolated_keeps_interior(self):
        s = va.make_scheme((1900, 1999), 25, "interpolated")
        assert all(b.mode == "interior" for b in s.blocks)

    def test_extrapolated_keeps_ends(self):
        s = va.make_scheme((1900, 1999), 25, "extrapolated")
        assert [b.mode for b in s.blocks] == ["front", "back"]

    def test_unknown_mode(self):
        with pytest.raises(ConfigurationError):
            va.make_scheme((1900, 1999), 25, "sideways")


class TestMethodConfig:
    def test_unknown_method(self):
        with pytest.raises(ConfigurationError):
            va.MethodConfig("kriging")

    def test_tag_sorts_params(self):
        m = va.MethodConfig("lasso", {"lam": 0.1, "cv_folds": 5})
        assert m.tag == "lasso(cv_folds=5,lam=0.1)"


class TestHoldoutRmse:
    def test_near_perfect_proxies_near_zero_rmse(self, seed):
        X, y = signal_setup(seed, noise=1e-4)
        scheme = va.make_scheme((1880, 1999), 30)
        rpt = va.rmse_profile(va.MethodConfig("ols"), X, y, scheme, seed=seed)
        assert rpt.errors == ()
        assert rpt.aggregate["mean"] < 0.01

    def test_block_years_excluded_from_training(self, seed):
        # corrupt the target inside one block; a model that never saw those
        # years must be unaffected by the corruption
        X, y = signal_setup(seed, noise=0.05)
        block = va.make_scheme((1880, 1999), 30).blocks[1]
        y2 = make_series(y.values.copy(), start_year=y.start_year)
        v = y2.values.copy()
        v[block.start_year - y.start_year] = 1e6
        y2 = make_series(v, start_year=y.start_year)
        m = va.MethodConfig("ols")
        cal = (1880, 1999)
        f1, c1 = va.fit_method(m, X, y, block, cal, seed)
        f2, c2 = va.fit_method(m, X, y2, block, cal, seed)
        assert np.array_equal(f1.coefficients, f2.coefficients)

    def test_intercept_baseline_predicts_training_mean(self, seed):
        X, y = signal_setup(seed)
        scheme = va.make_scheme((1880, 1999), 30)
        b = scheme.blocks[0]
        model, cols = va.fit_method(va.MethodConfig("intercept"), X, y, b,
                                    (1880, 1999), seed)
        pred = va.predict_block(va.MethodConfig("intercept"), model, cols,
                                X, y, b)
        keep = np.ones(len(y), bool)
        keep[b.start_year - y.start_year:b.end_year - y.start_year + 1] = False
        assert np.allclose(pred, y.values[keep].mean(), atol=1e-12)

    def test_profile_records_per_block_errors(self, seed):
        X, y = signal_setup(seed)
        # wipe out the proxies over one block: coverage failure is recorded,
        # the rest of the profile still completes
        vals = X.values.copy()
        vals[60:90, 0] = np.nan  # one column missing over one block only
        X2 = make_matrix(vals, start_year=X.start_year)
        scheme = va.make_scheme((1880, 1999), 30)
        rpt = va.rmse_profile(va.MethodConfig("ols"), X2, y, scheme, seed=seed)
        assert len(rpt.errors) >= 1
        assert rpt.aggregate["n_failed"] >= 1
        assert np.isfinite(rpt.rmse_values()).sum() >= 1


class TestLambdaResolution:
    def test_tingley_rule_applied(self, seed):
        X, y = signal_setup(seed)
        b = va.make_scheme((1880, 1999), 30).blocks[0]
        model, _ = va.fit_method(va.MethodConfig("lasso", {"lam": "tingley"}),
                                 X, y, b, (1880, 1999), seed)
        _, Xtr, ytr, _ = va.training_design(X, y, b, (1880, 1999))
        from proxyrecon import solvers
        assert model.penalty[0] == solvers.tingley_lambda(Xtr, ytr)

    def test_cv_uses_grid_params(self, seed):
        X, y = signal_setup(seed, noise=0.3)
        b = va.make_scheme((1880, 1999), 30).blocks[0]
        m = va.MethodConfig("lasso", {"lam": "cv", "cv_repetitions": 2,
                                      "cv_grid_points": 5,
                                      "cv_grid_ratio": 0.5})
        model, _ = va.fit_method(m, X, y, b, (1880, 1999), seed)
        _, Xtr, ytr, _ = va.training_design(X, y, b, (1880, 1999))
        from proxyrecon import solvers
        grid = solvers.default_lambda_grid(solvers.lambda_max(Xtr, ytr),
                                           n_points=5, ratio=0.5)
        assert any(abs(model.penalty[0] - g) < 1e-15 for g in grid)


class TestNullBenchmarks:
    def test_samples_shape_and_determinism(self, seed):
        X, y = signal_setup(seed)
        scheme = va.make_scheme((1880, 1999), 40)
        ns = va.NullSpec("white", 5)
        m = va.MethodConfig("ols")
        s1, r1 = va.null_distribution(m, ns, y, scheme, 8, seed)
        s2, _ = va.null_distribution(m, ns, y, scheme, 8, seed)
        assert s1.shape == (8, len(scheme.blocks))
        assert np.array_equal(s1, s2)
        assert len(r1) == 8

    def test_band_quantiles_ordered(self, seed):
        X, y = signal_setup(seed)
        scheme = va.make_scheme((1880, 1999), 40)
        s, _ = va.null_distribution(va.MethodConfig("ols"),
                                    va.NullSpec("white", 5), y, scheme, 12,
                                    seed)
        band = va.null_band(s)
        assert np.all(band.per_block[:, 0] <= band.per_block[:, 1])
        assert np.all(band.per_block[:, 1] <= band.per_block[:, 2])

    def test_significance_counting(self):
        rpt = va.RmseReport(method="m", predictor_source="proxy",
                            per_block=((va.HoldoutBlock(1900, 1909, "front"), 1.0),),
                            aggregate={})
        nulls = np.array([[0.5], [1.5], [2.0], [0.9]])
        sig = va.significance(rpt, nulls, "per_block")
        assert sig["counts"] == [2]
        assert sig["exceedance"] == [(2 + 1) / (4 + 1)]
        agg = va.significance(rpt, nulls, "aggregate")
        assert agg["counts"] == 2

    def test_strong_signal_beats_nulls(self, seed):
        X, y = signal_setup(seed, noise=0.05)
        scheme = va.make_scheme((1880, 1999), 40)
        m = va.MethodConfig("ols")
        rpt = va.rmse_profile(m, X, y, scheme, seed=seed)
        s, _ = va.null_distribution(m, va.NullSpec("white", 5), y, scheme,
                                    19, seed)
        sig = va.significance(rpt, s, "aggregate")
        assert sig["exceedance"] == 1.0 / 20.0  # no null ever matched

    def test_ar1_empirical_needs_reference(self):
        ns = va.NullSpec("ar1_empirical", 3)
        with pytest.raises(ConfigurationError):
            ns.resolve_params()


class TestRobustnessGrid:
    def test_grid_runs_and_is_thread_invariant(self, seed, tmp_path):
        X, y = signal_setup(seed, n=100, start_year=1900)
        targets = {"synthetic": (X, y)}
        methods = [va.MethodConfig("ols"), va.MethodConfig("intercept")]
        nulls = [None, va.NullSpec("white", 5)]
        kw = dict(block_lengths=[25], modes=["all"], targets=targets,
                  calibration=(1900, 1999), n_replications=5)
        r1 = va.robustness_grid(methods, nulls, seed=Seed(3), threads=1, **kw)
        r4 = va.robustness_grid(methods, nulls, seed=Seed(3), threads=4, **kw)
        assert r1 == r4
        assert len(r1) == 4
        assert all(c["error"] is None for c in r1)

    def test_grid_resumes_from_cache(self, seed, tmp_path):
        X, y = signal_setup(seed, n=100, start_year=1900)
        kw = dict(methods=[va.MethodConfig("ols")],
                  null_specs=[None], block_lengths=[25], modes=["all"],
                  targets={"t": (X, y)}, calibration=(1900, 1999),
                  seed=Seed(3), out_dir=str(tmp_path), n_replications=3)
        r1 = va.robustness_grid(**kw)
        cells = list(tmp_path.glob("cell_*.json"))
        assert len(cells) == 1
        # poison the cache: a second run must read it, not recompute
        cells[0].write_text(cells[0].read_text().replace(
            '"error": null', '"error": "from_cache"'))
        r2 = va.robustness_grid(**kw)
        assert r2[0]["error"] == "from_cache" and r1[0]["error"] is None

    def test_grid_records_cell_failures(self, seed):
        X, y = signal_setup(seed, n=100, start_year=1900)
        # block length longer than the calibration span fails in-cell
        res = va.robustness_grid([va.MethodConfig("ols")], [None],
                                 block_lengths=[500], modes=["all"],
                                 targets={"t": (X, y)},
                                 calibration=(1900, 1999), seed=Seed(0))
        assert res[0]["error"] is not None
