"""Holdout cross-validation harness and null-benchmark significance machinery.

A method configuration names a fitting procedure; for each holdout block the
harness trains on the calibration range minus the block (the block target is
structurally invisible to the fit) and scores RMSE over the block.  Null
distributions repeat the profile on freshly drawn pseudoproxy matrices;
exceedance probabilities use raw Monte Carlo counts with the standard +1
correction, never an asymptotic approximation.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import solvers
from .data import (AnnualSeries, ConfigurationError, DegenerateSeriesError,
                   HoldoutBlock, HoldoutScheme, ProxyMatrix)
from .pseudoproxy import Ar1Params, fit_ar1, gen_noise_matrix
from .seeding import Seed

METHODS = ("lasso", "elastic_net", "ridge", "ols", "pc_ols", "cps", "arma",
           "intercept", "composite_regression")


@dataclass(frozen=True)
class MethodConfig:
    """A named fitting procedure plus its hyperparameters.

    params by method:
      lasso: lam (float | 'tingley' | 'cv'), cv_folds, cv_repetitions,
             cv_grid_points, cv_grid_ratio
      elastic_net: lam, alpha;  ridge: lam
      pc_ols: K, groups;  cps: weight_mode;  arma: p, q
      composite_regression / ols / intercept: none
    """

    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in METHODS:
            raise ConfigurationError(f"unknown method {self.name!r}")

    @property
    def tag(self) -> str:
        if not self.params:
            return self.name
        inner = ",".join(f"{k}={v}" for k, v in sorted(self.params.items()))
        return f"{self.name}({inner})"


@dataclass(frozen=True)
class NullSpec:
    """A pseudoproxy null generator: kind + parameters + column count."""

    kind: str  # white | ar1 | ar1_empirical | brownian
    n_series: int
    phi: float = 0.0
    innovation_sd: float = 1.0
    reference: ProxyMatrix = None  # fitted per-column for ar1_empirical

    @property
    def tag(self) -> str:
        if self.kind == "ar1":
            return f"ar1({self.phi:g})"
        return self.kind

    def resolve_params(self):
        if self.kind == "ar1":
            return Ar1Params(self.phi, self.innovation_sd)
        if self.kind == "ar1_empirical":
            if self.reference is None:
                raise ConfigurationError("ar1_empirical needs a reference matrix")
            fitted = [fit_ar1(self.reference.series(j))
                      for j in range(self.reference.n_series)]
            if len(fitted) >= self.n_series:
                return fitted[: self.n_series]
            reps = int(np.ceil(self.n_series / len(fitted)))
            return (fitted * reps)[: self.n_series]
        return None


@dataclass(frozen=True)
class RmseReport:
    method: str
    predictor_source: str
    per_block: tuple          # ((HoldoutBlock, rmse or nan), ...)
    aggregate: dict           # mean / median over valid blocks
    replication_id: int = 0
    seed: tuple = None
    errors: tuple = ()

    def rmse_values(self) -> np.ndarray:
        return np.array([r for _, r in self.per_block])

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "predictor_source": self.predictor_source,
            "per_block": [
                {"start_year": b.start_year, "end_year": b.end_year,
                 "mode": b.mode, "rmse": r}
                for b, r in self.per_block
            ],
            "aggregate": self.aggregate,
            "replication_id": self.replication_id,
            "seed": list(self.seed) if self.seed else None,
            "errors": list(self.errors),
        }


@dataclass(frozen=True)
class NullBand:
    quantile_levels: tuple
    per_block: np.ndarray  # blocks x quantiles
    n_replications: int


# ---------------------------------------------------------------------------
# Training-set construction


def _training_rows(X, y, block, calibration):
    """Row indices (into X/y year ranges) of the effective training set:
    calibration years outside the block where the target is observed."""
    lo, hi = int(calibration[0]), int(calibration[1])
    years = np.arange(lo, hi + 1)
    in_block = ((years >= block.start_year) & (years <= block.end_year)
                if block is not None else np.zeros(years.size, bool))
    yi = years - y.start_year
    valid = (years >= y.start_year) & (years <= y.end_year)
    observed = np.zeros(years.size, bool)
    observed[valid] = ~y.missing[yi[valid]]
    keep = ~in_block & observed
    if X is not None:
        valid &= (years >= X.start_year) & (years <= X.end_year)
        keep &= valid
    return years[keep]


def training_design(X: ProxyMatrix, y: AnnualSeries, block, calibration):
    """(train_years, Xtr, ytr, kept_columns): columns with any missing
    training value are dropped (logged by the caller via kept_columns)."""
    train_years = _training_rows(X, y, block, calibration)
    if train_years.size == 0:
        raise solvers.CoverageError("empty effective training set")
    xi = train_years - X.start_year
    cols = np.flatnonzero(~X.missing[xi].any(axis=0))
    if cols.size == 0:
        raise DegenerateSeriesError("no complete proxy columns over training set")
    Xtr = X.values[np.ix_(xi, cols)]
    ytr = y.values[train_years - y.start_year]
    return train_years, Xtr, ytr, cols


def _resolve_lambda(param, Xtr, ytr, method: MethodConfig, seed: Seed):
    if param == "tingley":
        return solvers.tingley_lambda(Xtr, ytr)
    if param == "cv":
        grid = None
        if "cv_grid_points" in method.params or "cv_grid_ratio" in method.params:
            grid = solvers.default_lambda_grid(
                solvers.lambda_max(Xtr, ytr),
                n_points=int(method.params.get("cv_grid_points", 30)),
                ratio=float(method.params.get("cv_grid_ratio", 1e-2)))
        lam, _ = solvers.select_lambda_cv(
            Xtr, ytr,
            folds=int(method.params.get("cv_folds", 5)),
            repetitions=int(method.params.get("cv_repetitions", 10)),
            grid=grid,
            seed=seed.derive("lambda_cv"),
        )
        return lam
    return float(param)


def fit_method(method: MethodConfig, X, y, block, calibration, seed: Seed = None):
    """Train the configured method on calibration-minus-block.

    Returns (model, cols) where cols maps model columns back to X columns
    (None for target-only methods)."""
    seed = seed or Seed(0)
    cal = (int(calibration[0]), int(calibration[1]))

    if method.name in ("intercept", "arma"):
        train_years = _training_rows(None, y, block, cal)
        if train_years.size == 0:
            raise solvers.CoverageError("empty effective training set")
        ytr = y.values[train_years - y.start_year]
        if method.name == "intercept":
            return solvers.fit_intercept(ytr, cal), None
        p = int(method.params.get("p", 2))
        q = int(method.params.get("q", 0))
        return solvers.fit_arma(ytr, p, q, cal), None

    if method.name == "cps":
        # mask block years so calibration statistics cannot see them
        masked = _mask_years(y, block)
        masked_X = _mask_matrix_years(X, block)
        model = solvers.fit_cps(masked_X, masked,
                                method.params.get("weight_mode", "latitude_cosine"),
                                calibration=cal)
        return model, None

    train_years, Xtr, ytr, cols = training_design(X, y, block, cal)

    if method.name == "lasso":
        lam = _resolve_lambda(method.params.get("lam", "cv"), Xtr, ytr, method, seed)
        return solvers.fit_lasso(Xtr, ytr, lam, cal), cols
    if method.name == "elastic_net":
        lam = _resolve_lambda(method.params.get("lam", 0.0), Xtr, ytr, method, seed)
        return solvers.fit_elastic_net(Xtr, ytr, lam,
                                       float(method.params.get("alpha", 0.5)),
                                       cal), cols
    if method.name == "ridge":
        lam = _resolve_lambda(method.params.get("lam", 0.1), Xtr, ytr, method, seed)
        return solvers.fit_elastic_net(Xtr, ytr, lam, 0.0, cal, method="ridge"), cols
    if method.name == "ols":
        return solvers.fit_elastic_net(Xtr, ytr, 0.0, 1.0, cal, method="ols"), cols
    if method.name == "pc_ols":
        K = int(method.params.get("K", 4))
        groups = method.params.get("groups")
        if groups is not None:
            groups = np.asarray(groups)[cols]
        return solvers.fit_pc_ols(Xtr, ytr, K, groups=groups,
                                  calibration_range=cal), cols
    if method.name == "composite_regression":
        # univariate OLS of y on the mean of standardized predictors
        mu = Xtr.mean(axis=0)
        sd = Xtr.std(axis=0, ddof=1)
        sd[sd == 0] = 1.0
        comp = ((Xtr - mu) / sd).mean(axis=1)
        D = np.column_stack([np.ones_like(comp), comp])
        (a, b), *_ = np.linalg.lstsq(D, ytr, rcond=None)
        p = Xtr.shape[1]
        return solvers.LinearModel(
            intercept=float(a), coefficients=np.full(p, b / p),
            column_means=mu, column_sds=sd, method="composite_regression",
            penalty=(0.0, 0.0), calibration_range=cal), cols
    raise ConfigurationError(f"unknown method {method.name!r}")


def _mask_years(y: AnnualSeries, block):
    if block is None:
        return y
    m = y.missing.copy()
    lo = max(block.start_year, y.start_year)
    hi = min(block.end_year, y.end_year)
    if lo <= hi:
        m[lo - y.start_year : hi - y.start_year + 1] = True
    return AnnualSeries(y.start_year, y.values, m, y.notes)


def _mask_matrix_years(X: ProxyMatrix, block):
    if block is None:
        return X
    m = X.missing.copy()
    lo = max(block.start_year, X.start_year)
    hi = min(block.end_year, X.end_year)
    if lo <= hi:
        m[lo - X.start_year : hi - X.start_year + 1, :] = True
    return ProxyMatrix(X.start_year, X.columns, X.values, m)


def predict_block(method: MethodConfig, model, cols, X, y, block):
    """Predictions over the block years (np array aligned to block)."""
    if isinstance(model, solvers.ArmaModel):
        history = _mask_years(y, block)
        return solvers.arma_conditional_mean(
            model, history, (block.start_year, block.end_year))
    if isinstance(model, solvers.CpsModel):
        blk, blk_missing = X.block(block.start_year, block.end_year)
        return model.design_predict(blk, blk_missing)
    if isinstance(model, solvers.LinearModel):
        if model.n_columns == 0:
            return np.full(block.length, model.intercept)
        blk, blk_missing = X.block(block.start_year, block.end_year)
        blk = blk[:, cols]
        if blk_missing[:, cols].any():
            raise solvers.CoverageError("missing predictor values inside block")
        return model.design_predict(blk)
    raise ConfigurationError(f"unsupported model {type(model).__name__}")


def holdout_rmse(method: MethodConfig, X, y: AnnualSeries, block: HoldoutBlock,
                 calibration, seed: Seed = None) -> float:
    """RMSE of the block predictions against the observed target."""
    model, cols = fit_method(method, X, y, block, calibration, seed)
    pred = predict_block(method, model, cols, X, y, block)
    lo = block.start_year
    yi = np.arange(lo, block.end_year + 1) - y.start_year
    obs_mask = ~y.missing[yi]
    if not obs_mask.any():
        raise solvers.CoverageError("no observed target values inside block")
    err = pred[obs_mask] - y.values[yi][obs_mask]
    return float(np.sqrt(np.mean(err**2)))


def rmse_profile(method: MethodConfig, X, y, scheme: HoldoutScheme,
                 predictor_source="proxy", replication_id=0,
                 seed: Seed = None) -> RmseReport:
    """Per-block RMSE over a holdout scheme; per-block errors are recorded,
    not fatal."""
    seed = seed or Seed(0)
    per_block = []
    errors = []
    for b in scheme.blocks:
        try:
            r = holdout_rmse(method, X, y, b, scheme.calibration_range,
                             seed.derive("block", b.start_year))
        except Exception as exc:  # recorded per block
            r = float("nan")
            errors.append(f"{b.start_year}-{b.end_year}: {exc}")
        per_block.append((b, r))
    vals = np.array([r for _, r in per_block])
    valid = vals[np.isfinite(vals)]
    agg = {"mean": float(valid.mean()) if valid.size else float("nan"),
           "median": float(np.median(valid)) if valid.size else float("nan"),
           "n_blocks": int(vals.size), "n_failed": int(vals.size - valid.size)}
    return RmseReport(method=method.tag, predictor_source=predictor_source,
                      per_block=tuple(per_block), aggregate=agg,
                      replication_id=replication_id,
                      seed=(seed.master, seed.stream), errors=tuple(errors))


def null_distribution(method: MethodConfig, null_spec: NullSpec,
                      y: AnnualSeries, scheme: HoldoutScheme,
                      n_replications: int, seed: Seed):
    """Per-block RMSE samples under the null: each replication draws a fresh
    pseudoproxy matrix and reruns the profile.

    Returns (samples, reports): samples has shape (n_replications, n_blocks).
    """
    if n_replications < 1:
        raise ConfigurationError("need at least one replication")
    lo, hi = scheme.calibration_range
    params = null_spec.resolve_params()
    reports = []
    samples = np.empty((n_replications, len(scheme.blocks)))
    for rep in range(n_replications):
        rep_seed = seed.derive("nullrep", null_spec.tag, rep)
        Xr = gen_noise_matrix(null_spec.kind, params, hi - lo + 1,
                              null_spec.n_series, rep_seed, start_year=lo)
        rpt = rmse_profile(method, Xr, y, scheme,
                           predictor_source=null_spec.tag,
                           replication_id=rep, seed=rep_seed)
        reports.append(rpt)
        samples[rep] = rpt.rmse_values()
    return samples, reports


def null_band(samples, quantile_levels=(0.025, 0.5, 0.975)) -> NullBand:
    qs = np.column_stack([np.nanquantile(samples, q, axis=0)
                          for q in quantile_levels])
    return NullBand(tuple(quantile_levels), qs, samples.shape[0])


def significance(real: RmseReport, null_samples, mode="per_block") -> dict:
    """Exceedance probabilities: how often the null matches or beats the real
    profile.  Monte Carlo counts with the +1 correction, reported with n."""
    null_samples = np.asarray(null_samples, dtype=float)
    if null_samples.size == 0:
        raise ConfigurationError("null sample set is empty")
    n = null_samples.shape[0]
    real_vals = real.rmse_values()
    if mode == "per_block":
        counts = np.nansum(null_samples <= real_vals[None, :], axis=0)
        probs = (counts + 1.0) / (n + 1.0)
        return {"mode": mode, "n_replications": n,
                "counts": counts.astype(int).tolist(),
                "exceedance": probs.tolist()}
    if mode == "aggregate":
        null_means = np.nanmean(null_samples, axis=1)
        real_mean = float(np.nanmean(real_vals))
        count = int(np.sum(null_means <= real_mean))
        return {"mode": mode, "n_replications": n, "counts": count,
                "exceedance": float((count + 1.0) / (n + 1.0))}
    raise ConfigurationError(f"unknown significance mode {mode!r}")


# ---------------------------------------------------------------------------
# Robustness grid


def _cell_key(method, null_tag, length, mode, target_tag, seed) -> str:
    payload = json.dumps(
        {"method": method.tag, "null": null_tag, "length": length,
         "mode": mode, "target": target_tag,
         "seed": [seed.master, seed.stream]},
        sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


MODE_FILTERS = {"interpolated": ("interior",),
                "extrapolated": ("front", "back"),
                "all": None}


def robustness_grid(methods, null_specs, block_lengths, modes, targets,
                    calibration, seed: Seed, out_dir=None,
                    n_replications=100, threads=1):
    """Full factorial of profiles / null distributions.

    targets: {tag: (X or None, y)}.  null_specs may include None, meaning
    "use the real predictor matrix".  Cells are content-addressed in out_dir
    for resumability; per-cell errors are recorded and the grid continues.
    Results are independent of thread count (per-cell seeds).
    """
    cells = []
    for m in methods:
        for ns in null_specs:
            for length in block_lengths:
                for mode in modes:
                    for tag in targets:
                        cells.append((m, ns, int(length), mode, tag))

    def run_cell(cell):
        m, ns, length, mode, tag = cell
        null_tag = ns.tag if ns is not None else "proxy"
        cell_seed = seed.derive("cell", m.tag, null_tag, length, mode, tag)
        key = _cell_key(m, null_tag, length, mode, tag, cell_seed)
        path = os.path.join(out_dir, f"cell_{key}.json") if out_dir else None
        if path and os.path.exists(path):
            with open(path) as fh:
                return json.load(fh)
        X, y = targets[tag]
        result = {"key": key, "method": m.tag, "null": null_tag,
                  "block_length": length, "mode": mode, "target": tag,
                  "error": None}
        try:
            scheme = make_scheme(calibration, length, mode)
            if ns is None:
                rpt = rmse_profile(m, X, y, scheme, predictor_source="proxy",
                                   seed=cell_seed)
                result["report"] = rpt.to_dict()
            else:
                samples, reports = null_distribution(m, ns, y, scheme,
                                                     n_replications, cell_seed)
                band = null_band(samples)
                result["band"] = {
                    "quantile_levels": list(band.quantile_levels),
                    "per_block": band.per_block.tolist(),
                    "n_replications": band.n_replications,
                }
                result["aggregate_means"] = np.nanmean(samples, axis=1).tolist()
        except Exception as exc:
            result["error"] = f"{type(exc).__name__}: {exc}"
        if path:
            tmp = path + ".tmp"
            with open(tmp, "w") as fh:
                json.dump(result, fh, sort_keys=True)
            os.replace(tmp, path)
        return result

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(run_cell, cells))
    else:
        results = [run_cell(c) for c in cells]
    return results


def make_scheme(calibration, length, mode="all", stride=None) -> HoldoutScheme:
    """Scheme helper: stride defaults to the block length (partition-style)
    for grid cells; mode maps interpolated/extrapolated onto block tags."""
    from .data import make_holdout_blocks

    if mode not in MODE_FILTERS:
        raise ConfigurationError(f"unknown mode {mode!r}")
    return make_holdout_blocks(calibration, length,
                               stride=stride or length,
                               mode_filter=MODE_FILTERS[mode])
