"""Pseudoproxy generators: noise nulls, signal proxies, corrupted temperatures.

Null families: white noise, AR1(phi), AR1(Empirical) (parameters fitted per
real series), and Brownian motion.  Signal families: random-slope proxies
(column = slope * target + noise) and local temperatures corrupted by mixing
in white or red noise, appending pure-noise columns, or perturbing slopes.

Every generator is pure given (params, seed); columns derive per-column
streams from the seed so thread scheduling cannot change output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .data import (AnnualSeries, ConfigurationError, DegenerateSeriesError,
                   ProxyMatrix, SeriesMeta)
from .seeding import Seed


class ParameterError(ConfigurationError):
    """Invalid generator parameters (nonstationary phi, bad fraction, ...)."""


@dataclass(frozen=True)
class Ar1Params:
    phi: float
    innovation_sd: float = 1.0
    mean: float = 0.0

    def __post_init__(self):
        if not abs(self.phi) < 1.0:
            raise ParameterError(f"AR1 phi {self.phi} is not stationary")
        if not self.innovation_sd > 0:
            raise ParameterError("innovation_sd must be positive")

    @property
    def marginal_sd(self) -> float:
        return self.innovation_sd / np.sqrt(1.0 - self.phi**2)


@dataclass(frozen=True)
class TingleyConfig:
    """Random-slope signal proxies: x_{t,i} = slope_i * y_t + noise_{t,i}."""

    sigma_omega: float
    sigma_beta: float = 0.0
    n_series: int = 1
    slope_mean: float = 1.0

    def __post_init__(self):
        if self.n_series < 1:
            raise ParameterError("n_series must be >= 1")
        if self.sigma_omega < 0 or self.sigma_beta < 0:
            raise ParameterError("noise and slope sds must be nonnegative")


@dataclass(frozen=True)
class CorruptionSpec:
    """How to corrupt local temperatures into degraded predictors.

    snr_mix: add noise so its variance share of each column is noise_fraction.
    column_append: append pure-noise columns until they make up noise_fraction
    of all columns.  random_slope: multiply by a Normal(1, sigma_beta^2) slope
    before adding noise.
    """

    noise_fraction: float
    color: str = "white"  # white | red
    red_phi: float = 0.4
    variant: str = "snr_mix"  # snr_mix | column_append | random_slope
    sigma_beta: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.noise_fraction <= 1.0:
            raise ParameterError("noise_fraction must lie in [0, 1]")
        if self.color not in ("white", "red"):
            raise ParameterError(f"unknown noise color {self.color!r}")
        if self.variant not in ("snr_mix", "column_append", "random_slope"):
            raise ParameterError(f"unknown corruption variant {self.variant!r}")
        if not abs(self.red_phi) < 1.0:
            raise ParameterError("red_phi must be stationary")


# ---------------------------------------------------------------------------
# Column-level draws


def _ar1_column(rng, phi, innovation_sd, mean, n):
    e = rng.standard_normal(n) * innovation_sd
    # stationary start; recursion x_t = phi x_{t-1} + e_t via lfilter
    x0 = e[0] / np.sqrt(1.0 - phi**2)
    x, _ = lfilter([1.0], [1.0, -phi], e, zi=np.array([x0 - e[0]]))
    return mean + x


def _standardize_cols(x):
    mu = x.mean(axis=0)
    sd = x.std(axis=0, ddof=1)
    sd[sd == 0] = 1.0
    return (x - mu) / sd


def gen_noise_matrix(kind, params, n_years, n_series, seed: Seed,
                     start_year=1000) -> ProxyMatrix:
    """Draw a matrix of independent null pseudoproxy columns.

    kind: 'white' | 'ar1' | 'ar1_empirical' | 'brownian'.  params is an
    Ar1Params for 'ar1', a length-n_series list of Ar1Params for
    'ar1_empirical', and ignored otherwise.  Brownian columns are cumulative
    sums of iid standard normal increments, standardized over the full window
    so nulls are scale-comparable across methods.
    """
    if n_years < 2:
        raise ParameterError("need at least 2 years")
    if n_series < 1:
        raise ParameterError("need at least 1 series")
    if kind not in ("white", "ar1", "ar1_empirical", "brownian"):
        raise ParameterError(f"unknown noise kind {kind!r}")
    if kind == "ar1_empirical":
        params = list(params)
        if len(params) != n_series:
            raise ParameterError(
                f"ar1_empirical needs {n_series} parameter sets, got {len(params)}"
            )

    values = np.empty((n_years, n_series))
    for j in range(n_series):
        rng = seed.derive("noise", kind, j).generator()
        if kind == "white":
            values[:, j] = rng.standard_normal(n_years)
        elif kind == "ar1":
            p = params
            values[:, j] = _ar1_column(rng, p.phi, p.innovation_sd, p.mean, n_years)
        elif kind == "ar1_empirical":
            p = params[j]
            values[:, j] = _ar1_column(rng, p.phi, p.innovation_sd, p.mean, n_years)
        else:  # brownian
            values[:, j] = np.cumsum(rng.standard_normal(n_years))
    if kind == "brownian":
        values = _standardize_cols(values)

    columns = tuple(
        SeriesMeta(name=f"{kind}_{j:04d}", kind="pseudoproxy", first_year=start_year)
        for j in range(n_series)
    )
    return ProxyMatrix(start_year, columns, values)


def fit_ar1(series: AnnualSeries) -> Ar1Params:
    """Moment-match an AR1: phi = lag-1 autocorrelation of the demeaned series."""
    v = series.values[~series.missing]
    if v.size < 10:
        raise DegenerateSeriesError("need >= 10 non-missing values to fit AR1")
    mu = v.mean()
    d = v - mu
    denom = float(d @ d)
    if denom == 0.0:
        raise DegenerateSeriesError("constant series")
    phi = float(d[1:] @ d[:-1]) / denom
    phi = min(max(phi, -0.999), 0.999)
    sd = float(v.std(ddof=1))
    return Ar1Params(phi=phi, innovation_sd=sd * np.sqrt(1.0 - phi**2), mean=float(mu))


def gen_tingley(target: AnnualSeries, cfg: TingleyConfig, seed: Seed) -> ProxyMatrix:
    """Signal proxies x_{t,i} = slope_i * y_t + noise_{t,i}.

    slope_i is drawn once per series from Normal(slope_mean, sigma_beta^2)
    and noise is iid Normal(0, sigma_omega^2).  Slopes are recorded in the
    column names for traceability.
    """
    if target.missing.any():
        raise DegenerateSeriesError("target must have no missing values")
    y = target.values
    n = y.size
    values = np.empty((n, cfg.n_series))
    columns = []
    for j in range(cfg.n_series):
        rng = seed.derive("tingley", j).generator()
        beta = cfg.slope_mean + cfg.sigma_beta * rng.standard_normal()
        omega = cfg.sigma_omega * rng.standard_normal(n)
        values[:, j] = beta * y + omega
        columns.append(SeriesMeta(
            name=f"tingley_{j:04d}_slope={beta:.6g}",
            kind="pseudoproxy", first_year=target.start_year,
        ))
    return ProxyMatrix(target.start_year, tuple(columns), values)


def _noise_column(rng, spec: CorruptionSpec, n):
    if spec.color == "red":
        return _ar1_column(rng, spec.red_phi, 1.0, 0.0, n)
    return rng.standard_normal(n)


def corrupt_temperatures(local: ProxyMatrix, spec: CorruptionSpec,
                         seed: Seed) -> ProxyMatrix:
    """Degrade local-temperature predictors according to spec.variant."""
    if local.missing.any():
        raise DegenerateSeriesError("local temperatures must have no missing values")
    n, p = local.values.shape
    f = spec.noise_fraction

    if f == 0.0:
        return local

    if spec.variant == "snr_mix":
        if f >= 1.0:
            raise ParameterError("snr_mix with noise_fraction=1 is undefined")
        values = np.empty_like(local.values)
        for j in range(p):
            rng = seed.derive("corrupt", "snr_mix", j).generator()
            t = local.values[:, j]
            nu = _noise_column(rng, spec, n)
            nu = nu - nu.mean()
            sd_nu = nu.std(ddof=1)
            if sd_nu == 0:
                raise DegenerateSeriesError("degenerate noise draw")
            # scale so Var(nu)/(Var(T)+Var(nu)) == f using the sample variance of T
            scale = t.std(ddof=1) * np.sqrt(f / (1.0 - f)) / sd_nu
            values[:, j] = t + scale * nu
        return ProxyMatrix(local.start_year, local.columns, values)

    if spec.variant == "column_append":
        if f >= 1.0:
            raise ParameterError("column_append with noise_fraction=1 has no signal columns")
        total = int(np.ceil(p / (1.0 - f)))
        n_noise = total - p
        noise = np.empty((n, n_noise))
        cols = []
        for j in range(n_noise):
            rng = seed.derive("corrupt", "append", j).generator()
            noise[:, j] = _noise_column(rng, spec, n)
            cols.append(SeriesMeta(
                name=f"appended_noise_{j:04d}", kind="pseudoproxy",
                first_year=local.start_year,
            ))
        return ProxyMatrix(local.start_year, local.columns + tuple(cols),
                           np.hstack([local.values, noise]))

    # random_slope: column = slope_i * T + scaled noise
    if f >= 1.0:
        raise ParameterError("random_slope with noise_fraction=1 is undefined")
    values = np.empty_like(local.values)
    cols = []
    for j in range(p):
        rng = seed.derive("corrupt", "slope", j).generator()
        beta = 1.0 + spec.sigma_beta * rng.standard_normal()
        t = local.values[:, j]
        nu = _noise_column(rng, spec, n)
        nu = nu - nu.mean()
        sd_nu = nu.std(ddof=1)
        scale = 0.0 if f == 0 else t.std(ddof=1) * np.sqrt(f / (1.0 - f)) / sd_nu
        values[:, j] = beta * t + scale * nu
        c = local.columns[j]
        cols.append(SeriesMeta(name=f"{c.name}_slope={beta:.6g}", latitude=c.latitude,
                               longitude=c.longitude, kind=c.kind,
                               first_year=c.first_year))
    return ProxyMatrix(local.start_year, tuple(cols), values)


def gen_ar2_series(n_years, phi1=1.2, phi2=-0.3, innovation_sd=0.2,
                   mean=0.0, trend=0.0, seed: Seed = None,
                   start_year=1850) -> AnnualSeries:
    """Convenience AR2 target generator used by synthetic experiment modes.

    A linear trend (per-year slope) can be added on top of the stationary
    AR2 component; the AR polynomial is validated for stationarity.
    """
    roots = np.roots([-phi2, -phi1, 1.0]) if phi2 != 0 else (
        np.array([1.0 / phi1]) if phi1 != 0 else np.array([]))
    if np.any(np.abs(roots) <= 1.0):
        raise ParameterError("AR2 coefficients are not stationary")
    rng = (seed or Seed(0)).derive("ar2target").generator()
    burn = 200
    e = rng.standard_normal(n_years + burn) * innovation_sd
    x = np.zeros(n_years + burn)
    for t in range(2, n_years + burn):
        x[t] = phi1 * x[t - 1] + phi2 * x[t - 2] + e[t]
    x = x[burn:]
    t = np.arange(n_years)
    return AnnualSeries(start_year, mean + x + trend * t)
