"""Real-vs-simulated fidelity diagnostics.

Per-series summary statistics (lag-1 autocorrelation, correlation with the
target, sd of the first difference of the standardized series), sample
ACF/PACF, stationary-block-bootstrap null distributions, and QQ pairings of
statistic populations with a Kolmogorov-Smirnov distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import AnnualSeries, ConfigurationError, DegenerateSeriesError
from .seeding import Seed

STAT_NAMES = ("lag1_autocorr", "corr_with_target", "sd_first_diff_standardized")


@dataclass(frozen=True)
class SeriesStat:
    name: str
    value: float
    series_id: str = ""
    window: tuple = None

    def __post_init__(self):
        if self.name not in STAT_NAMES:
            raise ConfigurationError(f"unknown statistic {self.name!r}")
        if self.name.startswith(("lag1", "corr")) and not -1.0 - 1e-9 <= self.value <= 1.0 + 1e-9:
            raise ConfigurationError(f"{self.name} outside [-1, 1]")


@dataclass(frozen=True)
class QqReport:
    probs: np.ndarray
    reference_quantiles: np.ndarray
    test_quantiles: np.ndarray
    ks_distance: float
    band: np.ndarray = None  # per-quantile (lo, hi) bootstrap band, optional


def _values(series, window=None):
    if isinstance(series, AnnualSeries):
        if window is not None:
            series = series.slice(max(window[0], series.start_year),
                                  min(window[1], series.end_year))
        return series.values[~series.missing]
    v = np.asarray(series, dtype=float)
    return v[np.isfinite(v)]


def _lag1(v):
    # Pearson correlation of the lag-1 pairs (exactly -1 for an alternating
    # series, unlike the autocovariance-ratio estimator)
    a, b = v[1:], v[:-1]
    if a.std() == 0 or b.std() == 0:
        raise DegenerateSeriesError("constant series")
    return float(np.corrcoef(a, b)[0, 1])


def compute_stat(values, stat_name, target_values=None) -> float:
    """The raw statistic on a plain value array (shared with the bootstrap)."""
    v = np.asarray(values, dtype=float)
    if stat_name == "lag1_autocorr":
        return _lag1(v)
    if stat_name == "sd_first_diff_standardized":
        sd = v.std(ddof=1)
        if sd == 0:
            raise DegenerateSeriesError("constant series")
        z = (v - v.mean()) / sd
        return float(np.diff(z).std(ddof=1))
    if stat_name == "corr_with_target":
        if target_values is None:
            raise ConfigurationError("corr_with_target needs a target series")
        t = np.asarray(target_values, dtype=float)
        if v.std() == 0 or t.std() == 0:
            raise DegenerateSeriesError("constant series")
        return float(np.corrcoef(v, t)[0, 1])
    raise ConfigurationError(f"unknown statistic {stat_name!r}")


def series_stat(series, stat_name, target=None, window=None,
                series_id="") -> SeriesStat:
    """One summary statistic of a series over a window (>= 10 points)."""
    v = _values(series, window)
    if v.size < 10:
        raise DegenerateSeriesError("need >= 10 non-missing values in window")
    tv = None
    if stat_name == "corr_with_target":
        if target is None:
            raise ConfigurationError("corr_with_target needs a target series")
        # align on shared non-missing years when both are annual series
        if isinstance(series, AnnualSeries) and isinstance(target, AnnualSeries):
            lo = max(series.start_year, target.start_year,
                     window[0] if window else series.start_year)
            hi = min(series.end_year, target.end_year,
                     window[1] if window else series.end_year)
            a, b = series.slice(lo, hi), target.slice(lo, hi)
            both = ~a.missing & ~b.missing
            v, tv = a.values[both], b.values[both]
        else:
            tv = _values(target, window)
            if tv.size != v.size:
                raise ConfigurationError("series and target lengths differ")
    return SeriesStat(stat_name, compute_stat(v, stat_name, tv), series_id,
                      tuple(window) if window else None)


def acf_pacf(series, max_lag):
    """Sample ACF (autocovariance ratios) and PACF (Durbin-Levinson).

    Returns (acf, pacf), each of length max_lag with entries for lags
    1..max_lag.
    """
    v = _values(series)
    n = v.size
    if n <= max_lag + 10:
        raise ConfigurationError("series too short for requested max_lag")
    d = v - v.mean()
    c0 = float(d @ d) / n
    if c0 == 0:
        raise DegenerateSeriesError("constant series")
    acf = np.array([float(d[k:] @ d[:-k]) / n / c0 for k in range(1, max_lag + 1)])

    # Durbin-Levinson recursion
    pacf = np.zeros(max_lag)
    phi_prev = np.zeros(0)
    for k in range(1, max_lag + 1):
        if k == 1:
            num = acf[0]
        else:
            num = acf[k - 1] - float(phi_prev @ acf[k - 2 :: -1][: k - 1])
        den = 1.0 - (float(phi_prev @ acf[: k - 1]) if k > 1 else 0.0)
        a = num / den
        pacf[k - 1] = a
        phi = np.empty(k)
        phi[: k - 1] = phi_prev - a * phi_prev[::-1]
        phi[k - 1] = a
        phi_prev = phi
    return acf, pacf


def stationary_bootstrap_indices(n, mean_block_length, rng):
    """Index vector of one stationary-bootstrap resample (geometric block
    lengths, wrap-around)."""
    if mean_block_length >= n:
        return np.arange(n)
    p = 1.0 / mean_block_length
    idx = np.empty(n, dtype=int)
    pos = 0
    while pos < n:
        start = rng.integers(n)
        length = min(rng.geometric(p), n - pos)
        idx[pos : pos + length] = (start + np.arange(length)) % n
        pos += length
    return idx


def bootstrap_null(series_set, stat_name, block_length, n_boot,
                   seed: Seed, target=None) -> np.ndarray:
    """Stationary-block-bootstrap distribution of a statistic.

    Resamples each series independently (mean block length block_length) and
    pools the per-series statistics: returns an (n_boot * n_series,) sample.
    """
    if block_length < 1:
        raise ConfigurationError("block_length must be >= 1")
    if n_boot < 1:
        raise ConfigurationError("n_boot must be >= 1")
    if isinstance(series_set, AnnualSeries):
        series_set = [series_set]
    arrays = [_values(s) for s in series_set]
    tv = _values(target) if target is not None else None
    out = []
    for si, v in enumerate(arrays):
        for b in range(n_boot):
            rng = seed.derive("boot", si, b).generator()
            idx = stationary_bootstrap_indices(v.size, block_length, rng)
            t_res = tv[idx] if tv is not None else None
            out.append(compute_stat(v[idx], stat_name, t_res))
    return np.asarray(out)


def qq_compare(real_stats, sim_stats, band_samples=None, n_probs=99,
               band_level=0.95) -> QqReport:
    """Quantile-matched pairs of two statistic populations on a shared
    probability grid, with the KS distance and an optional bootstrap band.

    band_samples: iterable of sample arrays (e.g. bootstrap replicates of the
    reference population); the band is the per-quantile envelope of their
    quantiles at band_level.
    """
    real = np.sort(np.asarray(real_stats, dtype=float))
    sim = np.sort(np.asarray(sim_stats, dtype=float))
    if real.size == 0 or sim.size == 0:
        raise ConfigurationError("both samples must be nonempty")
    probs = np.arange(1, n_probs + 1) / (n_probs + 1)
    rq = np.quantile(real, probs)
    sq = np.quantile(sim, probs)

    # two-sample Kolmogorov-Smirnov distance
    allv = np.concatenate([real, sim])
    cdf_r = np.searchsorted(real, allv, side="right") / real.size
    cdf_s = np.searchsorted(sim, allv, side="right") / sim.size
    ks = float(np.max(np.abs(cdf_r - cdf_s)))

    band = None
    if band_samples is not None:
        qs = np.vstack([np.quantile(np.asarray(b, dtype=float), probs)
                        for b in band_samples])
        lo = (1.0 - band_level) / 2.0
        band = np.column_stack([np.quantile(qs, lo, axis=0),
                                np.quantile(qs, 1.0 - lo, axis=0)])
    return QqReport(probs=probs, reference_quantiles=rq, test_quantiles=sq,
                    ks_distance=ks, band=band)
