"""Packaged experiment recipes wiring the modules into named studies.

Each recipe writes a deterministic bundle under output_dir:

    manifest.json   recipe, parameters, seeds, input fingerprints, stages
    reports/*.json  structured results
    tables/*.csv    plot-ready flat tables

Real proxy/temperature data cannot ship with the package, so every recipe
has a synthetic mode that generates stand-in data from documented processes
(an AR2 target, random-slope proxies); real-data mode activates when the
spec's inputs reference user CSV files.  Bundles are byte-reproducible from
(spec, seed, inputs); replicate-level parallelism never changes results
because every replicate owns a derived seed.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__, bayes, diagnostics, pcselect, solvers
from .data import (AnnualSeries, ConfigurationError, ProxyMatrix, load_matrix,
                   load_series, make_holdout_blocks, standardize)
from .pseudoproxy import (Ar1Params, CorruptionSpec, TingleyConfig,
                          corrupt_temperatures, gen_ar2_series, gen_noise_matrix,
                          gen_tingley)
from .seeding import Seed
from .validation import (MethodConfig, NullSpec, null_band, null_distribution,
                         rmse_profile, significance)

RECIPES = ("cps_nulls", "tingley", "tingley_perturbed", "smerdon_snr",
           "smerdon_append", "smerdon_slope", "centering_bug",
           "bayes_backcast", "pc_criteria", "sim_fidelity")


@dataclass(frozen=True)
class ExperimentSpec:
    recipe: str
    output_dir: str
    parameters: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)  # name -> csv path
    seed: Seed = field(default_factory=lambda: Seed(0))
    threads: int = 1

    def __post_init__(self):
        if self.recipe not in RECIPES:
            raise ConfigurationError(f"unknown recipe {self.recipe!r}")
        for name, path in self.inputs.items():
            if not os.path.exists(path):
                raise ConfigurationError(f"input {name!r} not found: {path}")

    def param(self, key, default):
        v = self.parameters.get(key, default)
        if isinstance(default, (int, float)) and not isinstance(default, bool):
            return type(default)(v)
        return v


def _fmt(x) -> str:
    if isinstance(x, float):
        return "%.17g" % x
    return str(x)


def _parallel_map(fn, items, threads):
    """Order-preserving map; results do not depend on thread count."""
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


class Bundle:
    """Accumulates a deterministic report bundle on disk."""

    def __init__(self, spec: ExperimentSpec):
        self.spec = spec
        self.root = spec.output_dir
        os.makedirs(os.path.join(self.root, "reports"), exist_ok=True)
        os.makedirs(os.path.join(self.root, "tables"), exist_ok=True)
        self.stages = []
        self.outputs = []

    def write_table(self, name, header, rows):
        rel = os.path.join("tables", name + ".csv")
        with open(os.path.join(self.root, rel), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(c) for c in row])
        self.outputs.append(rel)

    def write_report(self, name, payload):
        rel = os.path.join("reports", name + ".json")
        with open(os.path.join(self.root, rel), "w") as fh:
            json.dump(payload, fh, sort_keys=True, indent=1)
        self.outputs.append(rel)

    def stage(self, name, status="ok", error=None):
        self.stages.append({"name": name, "status": status, "error": error})

    def finish(self) -> dict:
        fingerprints = {}
        for name, path in sorted(self.spec.inputs.items()):
            with open(path, "rb") as fh:
                fingerprints[name] = hashlib.sha256(fh.read()).hexdigest()
        manifest = {
            "version": __version__,
            "recipe": self.spec.recipe,
            "seed": [self.spec.seed.master, self.spec.seed.stream],
            "parameters": {k: self.spec.parameters[k]
                           for k in sorted(self.spec.parameters)},
            "inputs": fingerprints,
            "stages": self.stages,
            "outputs": sorted(self.outputs),
        }
        with open(os.path.join(self.root, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, sort_keys=True, indent=1)
        return manifest


# ---------------------------------------------------------------------------
# Synthetic stand-in data


def synthetic_target(spec: ExperimentSpec, seed: Seed, n_years=None,
                     start_year=1850, trend=0.0, standardized=True):
    """Stand-in annual target: stationary AR2 plus optional linear trend."""
    if "target" in spec.inputs:
        return load_series(spec.inputs["target"])
    n = n_years or spec.param("n_years", 149)
    y = gen_ar2_series(n, phi1=spec.param("target_phi1", 1.2),
                       phi2=spec.param("target_phi2", -0.3),
                       innovation_sd=spec.param("target_sd", 0.2),
                       trend=trend, seed=seed, start_year=start_year)
    if standardized:
        y = standardize(y, (y.start_year, y.end_year))
    return y


def synthetic_local_temperatures(target: AnnualSeries, n_series, noise_sd,
                                 seed: Seed) -> ProxyMatrix:
    """Local-temperature stand-ins: target plus independent AR1(0.3) noise,
    tagged kind=local_temperature."""
    from .pseudoproxy import _ar1_column
    from .data import SeriesMeta

    n = len(target)
    values = np.empty((n, n_series))
    cols = []
    for j in range(n_series):
        rng = seed.derive("local", j).generator()
        values[:, j] = target.values + _ar1_column(rng, 0.3, noise_sd, 0.0, n)
        cols.append(SeriesMeta(name=f"local_{j:04d}", latitude=45.0,
                               kind="local_temperature",
                               first_year=target.start_year))
    return ProxyMatrix(target.start_year, tuple(cols), values)


# ---------------------------------------------------------------------------
# Recipes


def _scheme_for(spec, y, length_key="block_length", stride_key="block_stride"):
    cal = (y.start_year, y.end_year)
    length = spec.param(length_key, 30)
    stride = spec.param(stride_key, length)
    return make_holdout_blocks(cal, length, stride)


def _profile_mean(method, X, y, scheme, seed):
    rpt = rmse_profile(method, X, y, scheme, seed=seed)
    return rpt.aggregate["mean"]


def run_tingley(spec: ExperimentSpec, bundle: Bundle):
    """CV-selected lambda versus the fixed 0.05*lambda_max rule, identical
    random-slope simulations, holdout RMSE per replicate."""
    # low-noise identical-slope proxies: the fixed 0.05*lambda_max rule
    # over-shrinks visibly there while CV tracks the tiny optimal penalty
    reps = spec.param("replicates", 20)
    n_series = spec.param("n_series", 10)
    sigma_omega = spec.param("sigma_omega", 0.05)
    sigma_beta = spec.param("sigma_beta", 0.0)
    cv_reps = spec.param("cv_repetitions", 5)
    cv_grid_ratio = spec.param("cv_grid_ratio", 0.01)

    def one(rep):
        s = spec.seed.derive("tingley", rep)
        y = synthetic_target(spec, s.derive("target"))
        X = gen_tingley(y, TingleyConfig(sigma_omega=sigma_omega,
                                         sigma_beta=sigma_beta,
                                         n_series=n_series), s.derive("prox"))
        scheme = _scheme_for(spec, y)
        m_cv = MethodConfig("lasso", {"lam": "cv", "cv_repetitions": cv_reps,
                                      "cv_grid_ratio": cv_grid_ratio,
                                      "cv_grid_points": 25})
        m_tk = MethodConfig("lasso", {"lam": "tingley"})
        return (rep, _profile_mean(m_cv, X, y, scheme, s.derive("cv")),
                _profile_mean(m_tk, X, y, scheme, s.derive("tk")))

    rows = _parallel_map(one, range(reps), spec.threads)
    table = [(r, cv, tk, cv / tk) for r, cv, tk in rows]
    bundle.write_table("tingley_lambda_rule",
                       ["replicate", "rmse_cv_lambda", "rmse_tingley_lambda",
                        "ratio"], table)
    mean_cv = float(np.mean([cv for _, cv, _ in rows]))
    mean_tk = float(np.mean([tk for _, _, tk in rows]))
    bundle.write_report("tingley_summary", {
        "replicates": reps, "mean_rmse_cv_lambda": mean_cv,
        "mean_rmse_tingley_lambda": mean_tk,
        "mean_ratio": mean_cv / mean_tk,
    })
    return {"mean_rmse_cv_lambda": mean_cv, "mean_rmse_tingley_lambda": mean_tk}


def run_tingley_perturbed(spec: ExperimentSpec, bundle: Bundle):
    """Composite regression versus the Lasso as the random-slope sd grows."""
    reps = spec.param("replicates", 20)
    n_series = spec.param("n_series", 100)
    sigma_omega = spec.param("sigma_omega", 0.5)
    sigma_betas = spec.parameters.get("sigma_betas", [0.0, 1/3, 1.0, 3.0, 9.0])
    sigma_betas = [float(s) for s in sigma_betas]
    lam_rule = spec.parameters.get("lasso_lambda", "tingley")
    cv_reps = spec.param("cv_repetitions", 3)

    jobs = [(sb, rep) for sb in sigma_betas for rep in range(reps)]

    def one(job):
        sb, rep = job
        s = spec.seed.derive("perturb", sb, rep)
        y = synthetic_target(spec, s.derive("target"))
        X = gen_tingley(y, TingleyConfig(sigma_omega=sigma_omega,
                                         sigma_beta=sb, n_series=n_series),
                        s.derive("prox"))
        scheme = _scheme_for(spec, y)
        m_lasso = MethodConfig("lasso", {"lam": lam_rule,
                                         "cv_repetitions": cv_reps})
        m_comp = MethodConfig("composite_regression")
        return (sb, rep, _profile_mean(m_comp, X, y, scheme, s.derive("c")),
                _profile_mean(m_lasso, X, y, scheme, s.derive("l")))

    rows = _parallel_map(one, jobs, spec.threads)
    bundle.write_table("tingley_perturbed",
                       ["sigma_beta", "replicate", "rmse_composite",
                        "rmse_lasso", "ratio"],
                       [(sb, r, c, l, c / l) for sb, r, c, l in rows])
    summary = {}
    for sb in sigma_betas:
        ratios = [c / l for b, _, c, l in rows if b == sb]
        summary[str(sb)] = {
            "mean_ratio": float(np.mean(ratios)),
            "n_ratio_above_1": int(sum(r > 1 for r in ratios)),
            "replicates": reps,
        }
    bundle.write_report("tingley_perturbed_summary", summary)
    return summary


def _smerdon_common(spec, bundle, variant):
    reps = spec.param("replicates", 5)
    n_local = spec.param("n_local", 60)
    noise_sd = spec.param("local_noise_sd", 0.5)
    fractions = spec.parameters.get(
        "fractions", [0.86, 0.94] if variant == "snr_mix" else [0.5])
    fractions = [float(f) for f in fractions]
    colors = spec.parameters.get(
        "colors", ["red", "white"] if variant == "snr_mix" else ["white"])
    lam_rule = spec.parameters.get("lasso_lambda", "tingley")

    jobs = [(f, c, rep) for f in fractions for c in colors
            for rep in range(reps)]

    def one(job):
        f, color, rep = job
        s = spec.seed.derive("smerdon", variant, f, color, rep)
        y = synthetic_target(spec, s.derive("target"))
        local = synthetic_local_temperatures(y, n_local, noise_sd,
                                             s.derive("local"))
        cs = CorruptionSpec(noise_fraction=f, color=color, variant=variant,
                            sigma_beta=spec.param("sigma_beta", 3.0))
        X = corrupt_temperatures(local, cs, s.derive("corrupt"))
        scheme = _scheme_for(spec, y)
        cal = (y.start_year, y.end_year)
        m_lasso = MethodConfig("lasso", {"lam": lam_rule})
        m_cps = MethodConfig("cps")
        out = {"fraction": f, "color": color, "replicate": rep,
               "n_columns": X.n_series}
        out["holdout_lasso"] = _profile_mean(m_lasso, X, y, scheme, s.derive("hl"))
        out["holdout_cps"] = _profile_mean(m_cps, X, y, scheme, s.derive("hc"))
        # in-sample: fit on the full calibration, score on it
        from .validation import fit_method
        for name, m in (("lasso", m_lasso), ("cps", m_cps)):
            model, cols = fit_method(m, X, y, None, cal, s.derive("is", name))
            if isinstance(model, solvers.CpsModel):
                pred = model.design_predict(X.values, X.missing)
            else:
                pred = model.design_predict(X.values[:, cols])
            err = pred[~y.missing] - y.values[~y.missing]
            out[f"insample_{name}"] = float(np.sqrt(np.mean(err**2)))
        return out

    rows = _parallel_map(one, jobs, spec.threads)
    header = ["fraction", "color", "replicate", "n_columns", "insample_lasso",
              "insample_cps", "holdout_lasso", "holdout_cps"]
    bundle.write_table(f"smerdon_{variant}", header,
                       [[r[h] for h in header] for r in rows])
    summary = {
        "variant": variant,
        "insample_lasso_below_cps": int(sum(
            r["insample_lasso"] < r["insample_cps"] for r in rows)),
        "holdout_lasso_below_cps": int(sum(
            r["holdout_lasso"] < r["holdout_cps"] for r in rows)),
        "cells": len(rows),
    }
    bundle.write_report(f"smerdon_{variant}_summary", summary)
    return summary


def run_smerdon_snr(spec, bundle):
    return _smerdon_common(spec, bundle, "snr_mix")


def run_smerdon_append(spec, bundle):
    return _smerdon_common(spec, bundle, "column_append")


def run_smerdon_slope(spec, bundle):
    return _smerdon_common(spec, bundle, "random_slope")


def run_centering_bug(spec: ExperimentSpec, bundle: Bundle):
    """Quantifies the fitted-mean centering error on trended targets.

    Models are fit to the raw (uncentered) target; predictions are centered
    either by the observed reference-period mean (correct) or by the mean of
    the model's own fitted values over the reference period (the bug)."""
    reps = spec.param("replicates", 50)
    trend = spec.param("trend", 0.03)
    n_series = spec.param("n_series", 20)
    sigma_omega = spec.param("sigma_omega", 6.0)
    method = MethodConfig(spec.parameters.get("method", "pc_ols"),
                          {"K": spec.param("K", 4)})
    start, end = 1856, 1980
    ref = (spec.param("ref_start", 1900), spec.param("ref_end", 1980))

    def one(rep):
        s = spec.seed.derive("centerbug", rep)
        y = synthetic_target(spec, s.derive("target"), n_years=end - start + 1,
                             start_year=start, trend=trend, standardized=False)
        X = gen_tingley(y, TingleyConfig(sigma_omega=sigma_omega,
                                         n_series=n_series), s.derive("prox"))
        cal = (start, end)
        # early extrapolation blocks: the attenuation bias of the fit and the
        # fitted-mean shift point the same way there, so the erroneous
        # centering compounds rather than cancels
        scheme = make_holdout_blocks(cal, spec.param("block_length", 25),
                                     spec.param("block_stride", 25),
                                     mode_filter=("front",))
        obs_ref_mean = float(y.window(*ref).mean())
        sq_correct, sq_bug, n_years_total = 0.0, 0.0, 0
        from .validation import fit_method, predict_block
        for b in scheme.blocks:
            model, cols = fit_method(method, X, y, b, cal, s.derive("f", b.start_year))
            pred = predict_block(method, model, cols, X, y, b)
            # the model's fitted values across the whole reference period
            ri, rj = X.index(ref[0]), X.index(ref[1])
            fitted_ref = model.design_predict(X.values[ri : rj + 1][:, cols])
            # correct: subtract observed mean; bug: subtract fitted mean
            fit_ref_mean = float(np.mean(fitted_ref))
            yi = np.arange(b.start_year, b.end_year + 1) - y.start_year
            target_anom = y.values[yi] - obs_ref_mean
            e_c = (pred - obs_ref_mean) - target_anom
            e_b = (pred - fit_ref_mean) - target_anom
            sq_correct += float(e_c @ e_c)
            sq_bug += float(e_b @ e_b)
            n_years_total += yi.size
        rmse_c = float(np.sqrt(sq_correct / n_years_total))
        rmse_b = float(np.sqrt(sq_bug / n_years_total))
        return rep, rmse_c, rmse_b

    rows = _parallel_map(one, range(reps), spec.threads)
    bundle.write_table("centering_bug",
                       ["replicate", "rmse_correct_centering",
                        "rmse_fitted_centering_bug"],
                       [(r, c, b) for r, c, b in rows])
    n_worse = int(sum(b > c for _, c, b in rows))
    summary = {"replicates": reps, "bug_strictly_worse": n_worse,
               "mean_rmse_correct": float(np.mean([c for _, c, _ in rows])),
               "mean_rmse_bug": float(np.mean([b for _, _, b in rows]))}
    bundle.write_report("centering_bug_summary", summary)
    return summary


def run_cps_nulls(spec: ExperimentSpec, bundle: Bundle):
    """Holdout RMSE boxplot study: methods on signal proxies versus null
    pseudoproxy families, with null bands and exceedance probabilities."""
    n_series = spec.param("n_series", 15)
    n_repl = spec.param("null_replications", 100)
    slope = spec.param("slope", 0.7)
    noise_phi = spec.param("noise_phi", 0.9)
    s = spec.seed
    y = synthetic_target(spec, s.derive("target"),
                         trend=spec.param("trend", 0.02))
    # weak-signal proxies with persistent noise, so AR1(Empirical) nulls are
    # themselves persistent
    noise = gen_noise_matrix("ar1", Ar1Params(noise_phi), len(y), n_series,
                             s.derive("prox"), start_year=y.start_year)
    X = ProxyMatrix(y.start_year, noise.columns,
                    slope * y.values[:, None] + noise.values)
    scheme = _scheme_for(spec, y)
    methods = [MethodConfig("cps"),
               MethodConfig("lasso", {"lam": "tingley"}),
               MethodConfig("pc_ols", {"K": 4}),
               MethodConfig("arma", {"p": 2, "q": 0}),
               MethodConfig("intercept")]
    nulls = [NullSpec("white", n_series),
             NullSpec("ar1", n_series, phi=0.25),
             NullSpec("ar1", n_series, phi=0.4),
             NullSpec("ar1_empirical", n_series, reference=X),
             NullSpec("brownian", n_series)]

    box_rows = []
    sig_report = {}
    for m in methods:
        rpt = rmse_profile(m, X, y, scheme, seed=s.derive("real", m.tag))
        for b, r in rpt.per_block:
            box_rows.append((m.tag, "proxy", b.start_year, b.mode, r))
        if m.name in ("arma", "intercept"):
            continue
        for ns in nulls:
            samples, _ = null_distribution(m, ns, y, scheme, n_repl,
                                           s.derive("null", m.tag, ns.tag))
            band = null_band(samples)
            for bi, (b, _) in enumerate(rpt.per_block):
                for q, v in zip(band.quantile_levels, band.per_block[bi]):
                    box_rows.append((m.tag, f"{ns.tag}_q{q}", b.start_year,
                                     b.mode, v))
            sig_report[f"{m.tag}|{ns.tag}"] = {
                "per_block": significance(rpt, samples, "per_block"),
                "aggregate": significance(rpt, samples, "aggregate"),
            }
    bundle.write_table("cps_nulls_rmse",
                       ["method", "source", "block_start", "block_mode", "rmse"],
                       box_rows)
    bundle.write_report("cps_nulls_significance", sig_report)
    return {"methods": [m.tag for m in methods],
            "nulls": [n.tag for n in nulls]}


def run_bayes_backcast(spec: ExperimentSpec, bundle: Bundle):
    """Fit the Bayesian AR + PC model on the calibration period, backcast the
    pre-instrumental years, and decompose the uncertainty."""
    K = spec.param("K", 10)
    ar_order = spec.param("ar_order", 2)
    cal_start = spec.param("calibration_start", 1850)
    cal_end = spec.param("calibration_end", 1998)
    back_start = spec.param("backcast_start", 998)
    smooth_window = spec.param("smooth_window", 31)
    s = spec.seed

    if "target" in spec.inputs and "proxies" in spec.inputs:
        y_full = load_series(spec.inputs["target"])
        X = load_matrix(spec.inputs["proxies"],
                        spec.inputs.get("proxies_meta"))
    else:
        n_total = cal_end - back_start + 1
        y_full = synthetic_target(spec, s.derive("target"), n_years=n_total,
                                  start_year=back_start)
        X = gen_tingley(y_full, TingleyConfig(
            sigma_omega=spec.param("sigma_omega", 2.0),
            n_series=spec.param("n_series", 40)), s.derive("prox"))

    basis = solvers.pca_decompose(X, K, period=(cal_start, cal_end))
    ci, cj = X.index(cal_start), X.index(cal_end)
    bi, bj = X.index(back_start), X.index(cal_start - 1)
    y_cal = y_full.slice(cal_start, cal_end)
    mcmc = bayes.McmcConfig(
        iterations=spec.param("iterations", 5000),
        burn_in=spec.param("burn_in", 2500),
        chains=spec.param("chains", 4),
        seed=s.derive("mcmc"))
    bspec = bayes.BayesSpec(ar_order=ar_order, K=K, mcmc=mcmc)
    post = bayes.fit_bayes(y_cal.values, basis.scores[ci : cj + 1], bspec)
    ens = bayes.backcast_paths(post, basis.scores[bi : bj + 1],
                               y_cal.values, back_start, s.derive("paths"))
    bands = bayes.decompose_uncertainty(post, basis.scores[bi : bj + 1],
                                        y_cal.values, back_start,
                                        level=spec.param("level", 0.95),
                                        seed=s.derive("bands"))
    smoothed = bayes.smooth_paths(ens, smooth_window)
    sm_band = bayes.bands_from_ensemble(smoothed)

    rows = []
    years = bands.years
    for comp in ("epsilon_only", "beta_only", "total"):
        band = getattr(bands, comp)
        for i, yr in enumerate(years):
            rows.append((int(yr), comp, band[i, 0], band[i, 1]))
    for i, yr in enumerate(years):
        rows.append((int(yr), f"total_smoothed_w{smooth_window}",
                     sm_band[i, 0], sm_band[i, 1]))
    bundle.write_table("bayes_bands", ["year", "component", "lower", "upper"],
                       rows)
    mean_path = ens.path_draws.mean(axis=0)
    bundle.write_table("bayes_backcast_mean", ["year", "posterior_mean"],
                       [(int(yr), mean_path[i]) for i, yr in enumerate(years)])
    bundle.write_report("bayes_diagnostics", {
        "rhat": post.rhat, "n_draws": post.n_draws,
        "ar_order": ar_order, "K": K,
        "backcast_years": int(len(years)),
    })
    return {"backcast_years": int(len(years)),
            "rhat_max": float(max(post.rhat.values()))}


def run_pc_criteria(spec: ExperimentSpec, bundle: Bundle):
    """Criterion x threshold table of retained component counts."""
    if "eigenvalues" in spec.parameters:
        ev = np.asarray([float(v) for v in spec.parameters["eigenvalues"]])
    elif "proxies" in spec.inputs:
        X = load_matrix(spec.inputs["proxies"])
        basis = solvers.pca_decompose(X, min(X.n_years, X.n_series))
        ev = basis.eigenvalues
    else:
        y = synthetic_target(spec, spec.seed.derive("target"))
        X = gen_tingley(y, TingleyConfig(sigma_omega=2.0, n_series=20),
                        spec.seed.derive("prox"))
        basis = solvers.pca_decompose(X, 20)
        ev = basis.eigenvalues
    spectrum = pcselect.Spectrum(ev)
    thresholds = [float(t) for t in
                  spec.parameters.get("thresholds", [0.7, 0.8, 0.9])]
    rows = [(crit, "" if th is None else th, k)
            for crit, th, k in pcselect.criteria_table(spectrum, thresholds)]
    bundle.write_table("pc_criteria", ["criterion", "threshold", "K"], rows)
    return {"n_eigenvalues": int(len(spectrum)),
            "rows": len(rows)}


def run_sim_fidelity(spec: ExperimentSpec, bundle: Bundle):
    """QQ comparison of summary-statistic populations between heterogeneous
    'real-style' series and homogeneous 'simulated-style' series, with a
    stationary-bootstrap null band."""
    n_series = spec.param("n_series", 40)
    n_years = spec.param("n_years", 149)
    stat = spec.parameters.get("statistic", "lag1_autocorr")
    s = spec.seed
    rng = s.derive("phis").generator()
    phis = rng.uniform(0.1, 0.9, n_series)
    real = gen_noise_matrix("ar1_empirical",
                            [Ar1Params(p) for p in phis],
                            n_years, n_series, s.derive("real"))
    sim = gen_noise_matrix("ar1", Ar1Params(0.25), n_years, n_series,
                           s.derive("sim"))
    real_stats = [diagnostics.series_stat(real.series(j), stat).value
                  for j in range(n_series)]
    sim_stats = [diagnostics.series_stat(sim.series(j), stat).value
                 for j in range(n_series)]
    n_boot = spec.param("n_boot", 100)
    block_length = spec.param("block_length", 10)
    band_sets = [
        diagnostics.bootstrap_null([sim.series(j) for j in range(n_series)],
                                   stat, block_length, 1, s.derive("band", b))
        for b in range(n_boot)
    ]
    rpt = diagnostics.qq_compare(real_stats, sim_stats, band_sets)
    rows = [(p, rq, tq, lo, hi) for p, rq, tq, (lo, hi) in
            zip(rpt.probs, rpt.reference_quantiles, rpt.test_quantiles,
                rpt.band)]
    bundle.write_table("sim_fidelity_qq",
                       ["prob", "ref_quantile", "test_quantile",
                        "band_lo", "band_hi"], rows)
    bundle.write_report("sim_fidelity_summary",
                        {"statistic": stat, "ks_distance": rpt.ks_distance,
                         "bootstrap": {"scheme": "stationary",
                                       "mean_block_length": block_length,
                                       "n_boot": n_boot}})
    return {"ks_distance": rpt.ks_distance}


_RUNNERS = {
    "cps_nulls": run_cps_nulls,
    "tingley": run_tingley,
    "tingley_perturbed": run_tingley_perturbed,
    "smerdon_snr": run_smerdon_snr,
    "smerdon_append": run_smerdon_append,
    "smerdon_slope": run_smerdon_slope,
    "centering_bug": run_centering_bug,
    "bayes_backcast": run_bayes_backcast,
    "pc_criteria": run_pc_criteria,
    "sim_fidelity": run_sim_fidelity,
}


def run(spec: ExperimentSpec) -> dict:
    """Execute a recipe and write its bundle; returns the manifest."""
    bundle = Bundle(spec)
    try:
        summary = _RUNNERS[spec.recipe](spec, bundle)
        bundle.stage(spec.recipe, "ok")
        bundle.write_report("summary", summary)
    except Exception as exc:
        bundle.stage(spec.recipe, "failed", f"{type(exc).__name__}: {exc}")
    return bundle.finish()
