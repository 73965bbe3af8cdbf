"""Bayesian autoregressive backcasting with uncertainty decomposition.

Model:  y_t = a + phi_1 y_{t-1} + phi_2 y_{t-2} + b . PC_t + eps_t,
eps_t iid Normal(0, sigma^2), with a Normal(0, scale^2) prior on all
regression coefficients and an Inverse-Gamma prior on sigma^2.  Sampling is
a blocked conjugate Gibbs sampler (coefficients | sigma, then sigma |
coefficients) over several chains, with split-chain scale-reduction
diagnostics.

Backcasting runs the fitted recursion in reversed index order: a stationary
Gaussian AR process is time-reversible, so the reverse-time recursion with
the same coefficients is exact under the model.  Uncertainty bands always
come from quantiles of simulated paths, never from smoothing band edges;
the component bands freeze either the parameters (innovation-only) or the
innovations (parameter-only).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import ConfigurationError
from .solvers import CoverageError
from .seeding import Seed


@dataclass(frozen=True)
class McmcConfig:
    iterations: int = 5000
    burn_in: int = 2500
    thin: int = 1
    chains: int = 4
    seed: Seed = field(default_factory=lambda: Seed(0))

    def __post_init__(self):
        if self.iterations <= self.burn_in:
            raise ConfigurationError("iterations must exceed burn_in")
        if self.chains < 2:
            raise ConfigurationError("need at least 2 chains for diagnostics")
        if self.thin < 1:
            raise ConfigurationError("thin must be >= 1")


@dataclass(frozen=True)
class BayesSpec:
    ar_order: int = 2
    K: int = 10
    coef_prior_scale: float = 10.0
    sigma_prior_shape: float = 0.01
    sigma_prior_scale: float = 0.01
    mcmc: McmcConfig = field(default_factory=McmcConfig)

    def __post_init__(self):
        if self.ar_order not in (0, 2):
            raise ConfigurationError("ar_order must be 0 or 2")
        if self.K < 0:
            raise ConfigurationError("K must be nonnegative")


@dataclass(frozen=True)
class Posterior:
    """Retained joint posterior draws, pooled across chains."""

    intercept: np.ndarray       # (draws,)
    ar_coeffs: np.ndarray       # (draws, ar_order)
    pc_coeffs: np.ndarray       # (draws, K)
    innovation_sd: np.ndarray   # (draws,)
    rhat: dict
    spec: BayesSpec

    @property
    def n_draws(self) -> int:
        return self.intercept.size

    def coef_matrix(self) -> np.ndarray:
        return np.column_stack([self.intercept, self.ar_coeffs, self.pc_coeffs])

    def posterior_means(self):
        return (float(self.intercept.mean()),
                self.ar_coeffs.mean(axis=0),
                self.pc_coeffs.mean(axis=0),
                float(self.innovation_sd.mean()))


@dataclass(frozen=True)
class PosteriorEnsemble:
    parameter_draws: Posterior
    path_draws: np.ndarray  # draws x years
    start_year: int

    def __post_init__(self):
        if np.any(self.parameter_draws.innovation_sd <= 0):
            raise ConfigurationError("innovation_sd must be positive in every draw")

    @property
    def n_years(self) -> int:
        return self.path_draws.shape[1]

    @property
    def years(self) -> np.ndarray:
        return np.arange(self.start_year, self.start_year + self.n_years)


@dataclass(frozen=True)
class UncertaintyBands:
    """Per-year (lower, upper) bands for each uncertainty component."""

    start_year: int
    level: float
    epsilon_only: np.ndarray  # years x 2
    beta_only: np.ndarray
    total: np.ndarray

    @property
    def years(self) -> np.ndarray:
        return np.arange(self.start_year, self.start_year + self.total.shape[0])

    def width(self, component: str) -> np.ndarray:
        band = getattr(self, component)
        return band[:, 1] - band[:, 0]


# ---------------------------------------------------------------------------
# Fitting


def _design(y, pcs, ar_order):
    """Response and design aligned so row t regresses y_t on its lags + PCs."""
    y = np.asarray(y, dtype=float)
    n = y.size
    pcs = np.zeros((n, 0)) if pcs is None else np.atleast_2d(np.asarray(pcs, float))
    if pcs.shape[0] != n:
        raise ConfigurationError("PC scores must align with y")
    rows = np.arange(ar_order, n)
    cols = [np.ones(rows.size)]
    for lag in range(1, ar_order + 1):
        cols.append(y[rows - lag])
    Z = np.column_stack(cols + [pcs[rows]]) if pcs.shape[1] else np.column_stack(cols)
    return Z, y[rows]


def _split_rhat(chains):
    """Split-chain potential scale reduction for one scalar parameter.

    chains: (n_chains, n_draws) array of retained draws."""
    half = chains.shape[1] // 2
    splits = np.vstack([chains[:, :half], chains[:, half : 2 * half]])
    m, n = splits.shape
    means = splits.mean(axis=1)
    W = splits.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1)
    if W <= 0:
        return 1.0
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W))


def fit_bayes(y, pcs, spec: BayesSpec) -> Posterior:
    """Blocked conjugate Gibbs sampler for the AR + PC regression.

    Draws coefficients | sigma from the conjugate multivariate normal and
    sigma^2 | coefficients from the conjugate inverse gamma.  Emits a warning
    (never fails silently) if any split-chain scale reduction exceeds 1.05.
    """
    Z, t = _design(y, pcs, spec.ar_order)
    n, d = Z.shape
    if n <= d:
        raise ConfigurationError("not enough observations for the design")

    ZtZ = Z.T @ Z
    Zty = Z.T @ t
    # eigendecomposition once; the per-iteration posterior covariance
    # (ZtZ + sigma^2/c^2 I)^{-1} then costs O(d^2)
    evals, Q = np.linalg.eigh(ZtZ)
    c2 = spec.coef_prior_scale**2
    a0 = spec.sigma_prior_shape
    b0 = spec.sigma_prior_scale

    cfg = spec.mcmc
    kept = (cfg.iterations - cfg.burn_in) // cfg.thin
    names = (["intercept"]
             + [f"ar{i+1}" for i in range(spec.ar_order)]
             + [f"pc{k+1}" for k in range(Z.shape[1] - 1 - spec.ar_order)])

    all_coef = np.empty((cfg.chains, kept, d))
    all_sd = np.empty((cfg.chains, kept))
    for chain in range(cfg.chains):
        rng = cfg.seed.derive("gibbs", chain).generator()
        sigma2 = float(np.var(t)) * (0.5 + rng.random())
        beta = np.zeros(d)
        k = 0
        for it in range(cfg.iterations):
            # coefficients | sigma^2
            ridge = sigma2 / c2
            inv_evals = 1.0 / (evals + ridge)
            mean = Q @ (inv_evals * (Q.T @ Zty))
            noise = Q @ (np.sqrt(inv_evals) * rng.standard_normal(d))
            beta = mean + np.sqrt(sigma2) * noise
            # sigma^2 | coefficients
            r = t - Z @ beta
            shape = a0 + 0.5 * n
            scale = b0 + 0.5 * float(r @ r)
            sigma2 = scale / rng.gamma(shape)
            if it >= cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
                all_coef[chain, k] = beta
                all_sd[chain, k] = np.sqrt(sigma2)
                k += 1

    rhat = {}
    for j, name in enumerate(names):
        rhat[name] = _split_rhat(all_coef[:, :, j])
    rhat["innovation_sd"] = _split_rhat(all_sd)
    bad = {k: v for k, v in rhat.items() if v > 1.05}
    if bad:
        warnings.warn(f"MCMC convergence suspect (split-Rhat > 1.05): {bad}",
                      RuntimeWarning, stacklevel=2)

    coef = all_coef.reshape(-1, d)
    sd = all_sd.reshape(-1)
    na = spec.ar_order
    return Posterior(intercept=coef[:, 0], ar_coeffs=coef[:, 1 : 1 + na],
                     pc_coeffs=coef[:, 1 + na :], innovation_sd=sd,
                     rhat=rhat, spec=spec)


# ---------------------------------------------------------------------------
# Backcasting


def _simulate_paths(intercepts, ars, pcs_coeffs, sds, pcs_past, y_init,
                    seed: Seed, innovations=True):
    """Reverse-time simulation, one path per parameter row.

    pcs_past rows are ordered oldest year first; simulation runs from the
    most recent backcast year toward the oldest.  y_init gives the earliest
    calibration values (lag-1 value first) used to start the recursion.
    """
    n_draws = intercepts.shape[0]
    m, K = pcs_past.shape
    ar_order = ars.shape[1]
    paths = np.empty((n_draws, m))
    rng = seed.derive("paths", innovations).generator()
    eps = rng.standard_normal((n_draws, m)) if innovations else np.zeros((n_draws, m))
    surf = intercepts[:, None] + pcs_coeffs @ pcs_past.T  # draws x m, oldest first
    if ar_order == 0:
        return surf + sds[:, None] * eps
    lag1 = np.full(n_draws, y_init[0])
    lag2 = np.full(n_draws, y_init[1]) if ar_order > 1 else None
    for i in range(m - 1, -1, -1):  # newest backcast year first
        v = surf[:, i] + ars[:, 0] * lag1
        if ar_order > 1:
            v = v + ars[:, 1] * lag2
        v = v + sds * eps[:, i]
        paths[:, i] = v
        if ar_order > 1:
            lag2 = lag1
        lag1 = v
    return paths


def backcast_paths(posterior: Posterior, pcs_past, y_calibration,
                   start_year, seed: Seed = None) -> PosteriorEnsemble:
    """Simulate one backcast path per retained posterior draw.

    pcs_past: (backcast_years x K) scores ordered oldest first; y_calibration
    supplies the first ar_order calibration values as initial lags (earliest
    first).  Deterministic per seed.
    """
    pcs_past = np.atleast_2d(np.asarray(pcs_past, float))
    if not np.all(np.isfinite(pcs_past)):
        raise CoverageError("PC scores missing over part of the backcast range")
    K = posterior.pc_coeffs.shape[1]
    if pcs_past.shape[1] != K:
        raise ConfigurationError(f"expected {K} PC columns, got {pcs_past.shape[1]}")
    seed = seed or posterior.spec.mcmc.seed.derive("backcast")
    ar_order = posterior.spec.ar_order
    y_init = (np.asarray(y_calibration, float)[:max(ar_order, 1)]
              if ar_order else np.zeros(1))
    paths = _simulate_paths(posterior.intercept, posterior.ar_coeffs,
                            posterior.pc_coeffs, posterior.innovation_sd,
                            pcs_past, y_init, seed, innovations=True)
    return PosteriorEnsemble(posterior, paths, int(start_year))


def _band(paths, level):
    lo = (1.0 - level) / 2.0
    return np.column_stack([np.quantile(paths, lo, axis=0),
                            np.quantile(paths, 1.0 - lo, axis=0)])


def decompose_uncertainty(posterior: Posterior, pcs_past, y_calibration,
                          start_year, level=0.95,
                          seed: Seed = None) -> UncertaintyBands:
    """Split predictive uncertainty into innovation and parameter components.

    epsilon_only: paths with parameters frozen at their posterior means,
    innovation randomness only.  beta_only: deterministic surfaces across
    parameter draws, no innovations.  total: full path draws.  All three are
    quantile bands of simulated paths at the same level and draw count.
    """
    pcs_past = np.atleast_2d(np.asarray(pcs_past, float))
    seed = seed or posterior.spec.mcmc.seed.derive("decompose")
    ar_order = posterior.spec.ar_order
    y_init = (np.asarray(y_calibration, float)[:max(ar_order, 1)]
              if ar_order else np.zeros(1))
    n = posterior.n_draws

    a_m, ar_m, pc_m, sd_m = posterior.posterior_means()
    eps_paths = _simulate_paths(
        np.full(n, a_m), np.tile(ar_m, (n, 1)), np.tile(pc_m, (n, 1)),
        np.full(n, sd_m), pcs_past, y_init, seed.derive("eps"),
        innovations=True)
    beta_paths = _simulate_paths(
        posterior.intercept, posterior.ar_coeffs, posterior.pc_coeffs,
        posterior.innovation_sd, pcs_past, y_init, seed.derive("beta"),
        innovations=False)
    total_paths = _simulate_paths(
        posterior.intercept, posterior.ar_coeffs, posterior.pc_coeffs,
        posterior.innovation_sd, pcs_past, y_init, seed.derive("total"),
        innovations=True)

    return UncertaintyBands(start_year=int(start_year), level=float(level),
                            epsilon_only=_band(eps_paths, level),
                            beta_only=_band(beta_paths, level),
                            total=_band(total_paths, level))


def bands_from_ensemble(ensemble: PosteriorEnsemble, level=0.95) -> np.ndarray:
    return _band(ensemble.path_draws, level)


def smooth_paths(ensemble: PosteriorEnsemble, window: int) -> PosteriorEnsemble:
    """Centered moving average of every path draw (bands must be recomputed
    from the smoothed paths).  Edges average over the available part of the
    window."""
    if window % 2 == 0:
        raise ConfigurationError("smoothing window must be odd")
    if window > ensemble.n_years:
        raise ConfigurationError("window exceeds path length")
    if window == 1:
        return ensemble
    half = window // 2
    kernel = np.ones(window)
    counts = np.convolve(np.ones(ensemble.n_years), kernel, mode="same")
    smoothed = np.empty_like(ensemble.path_draws)
    for i in range(ensemble.path_draws.shape[0]):
        smoothed[i] = np.convolve(ensemble.path_draws[i], kernel,
                                  mode="same") / counts
    return PosteriorEnsemble(ensemble.parameter_draws, smoothed,
                             ensemble.start_year)
