"""Reconstruction and baseline fitting methods with a uniform predict surface.

Penalized fits (Lasso / elastic net) run coordinate descent on internally
standardized predictors; the objective is

    (1/2n) * ||y - intercept - X b||^2 + lambda * (alpha*||b||_1 + (1-alpha)/2*||b||^2)

with the intercept unpenalized.  Every returned penalized solution carries a
verified KKT certificate.  PC-OLS models are flattened to the same linear
form so one predictor handles Lasso, ridge, elastic net, PC regression and
the intercept baseline.  CPS and ARMA get their own model records.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.linalg import solve_discrete_lyapunov

from .data import (AnnualSeries, ConfigurationError, DegenerateSeriesError,
                   ProxyMatrix)
from .seeding import Seed


class NumericError(ValueError):
    """Non-finite inputs or a failed numerical certificate."""


class CoverageError(ValueError):
    """Prediction requested for years with no usable inputs."""


KKT_TOL = 1e-6
CD_TOL = 1e-9
CD_MAX_SWEEPS = 10_000


# ---------------------------------------------------------------------------
# Model records


@dataclass(frozen=True)
class LinearModel:
    """Linear predictor on internally standardized columns.

    coefficients are on the standardized scale; prediction for a raw input
    row x is  intercept + sum_j coef_j * (x_j - column_means_j) / column_sds_j.
    Dropped columns (zero variance or missing data during calibration) keep a
    zero coefficient so the coefficient count always matches the training
    matrix.
    """

    intercept: float
    coefficients: np.ndarray
    column_means: np.ndarray
    column_sds: np.ndarray
    method: str
    penalty: tuple = (0.0, 1.0)  # (lambda, alpha)
    calibration_range: tuple = None
    dropped: tuple = ()

    def __post_init__(self):
        for name in ("coefficients", "column_means", "column_sds"):
            a = np.asarray(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def n_columns(self) -> int:
        return self.coefficients.size

    def raw_coefficients(self) -> np.ndarray:
        """Coefficients on the original (unstandardized) input scale."""
        sds = np.where(self.column_sds > 0, self.column_sds, 1.0)
        return self.coefficients / sds

    def raw_intercept(self) -> float:
        return float(self.intercept - np.sum(self.raw_coefficients() * self.column_means))

    def design_predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        sds = np.where(self.column_sds > 0, self.column_sds, 1.0)
        Z = (X - self.column_means) / sds
        return self.intercept + Z @ self.coefficients


@dataclass(frozen=True)
class PcBasis:
    """Principal components of a standardized predictor block."""

    loadings: np.ndarray      # series x K
    scores: np.ndarray        # years x K (over all available years)
    eigenvalues: np.ndarray   # K, nonincreasing (squared singular values)
    column_means: np.ndarray
    column_sds: np.ndarray
    score_missing: np.ndarray = None  # per-year mask for the score rows
    group_labels: tuple = None

    def __post_init__(self):
        ev = np.asarray(self.eigenvalues, dtype=float)
        if np.any(np.diff(ev) > 1e-9 * max(ev[0], 1.0)):
            raise NumericError("eigenvalues must be nonincreasing")
        if self.score_missing is None:
            object.__setattr__(self, "score_missing",
                               np.zeros(self.scores.shape[0], dtype=bool))


@dataclass(frozen=True)
class CpsModel:
    """Composite-plus-scale: weighted mean of standardized series, rescaled
    to the target's calibration mean and sd."""

    weights: np.ndarray
    composite_mean: float
    composite_sd: float
    target_mean: float
    target_sd: float
    weight_mode: str  # latitude_cosine | abs_correlation
    column_means: np.ndarray
    column_sds: np.ndarray
    calibration_range: tuple = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if not np.any(w > 0):
            raise DegenerateSeriesError("CPS requires at least one positive weight")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def composite(self, X: np.ndarray, missing: np.ndarray = None) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if missing is None:
            missing = ~np.isfinite(X)
        sds = np.where(self.column_sds > 0, self.column_sds, 1.0)
        Z = (X - self.column_means) / sds
        Z = np.where(missing, 0.0, Z)
        w = np.where(missing, 0.0, self.weights)
        denom = w.sum(axis=1)
        if np.any(denom <= 0):
            raise CoverageError("year with no positively weighted series present")
        return (Z * w).sum(axis=1) / denom

    def design_predict(self, X: np.ndarray, missing: np.ndarray = None) -> np.ndarray:
        c = self.composite(X, missing)
        return ((c - self.composite_mean) / self.composite_sd * self.target_sd
                + self.target_mean)


def _ar_roots_stationary(ar_coeffs) -> bool:
    ar = np.asarray(ar_coeffs, dtype=float)
    if ar.size == 0 or not np.any(ar):
        return True
    # roots of 1 - a1 z - ... - ap z^p must lie outside the unit circle
    roots = np.roots(np.r_[-ar[::-1], 1.0])
    return bool(np.all(np.abs(roots) > 1.0 + 1e-10))


@dataclass(frozen=True)
class ArmaModel:
    p: int
    q: int
    ar_coeffs: np.ndarray
    ma_coeffs: np.ndarray
    intercept: float
    innovation_sd: float
    calibration_range: tuple = None
    stationarity_projected: bool = False

    def __post_init__(self):
        ar = np.asarray(self.ar_coeffs, dtype=float)
        ma = np.asarray(self.ma_coeffs, dtype=float)
        if ar.size != self.p or ma.size != self.q:
            raise ConfigurationError("coefficient counts must match (p, q)")
        if not self.innovation_sd > 0:
            raise NumericError("innovation_sd must be positive")
        if not _ar_roots_stationary(ar):
            raise NumericError("AR polynomial roots must lie outside the unit circle")
        ar.setflags(write=False)
        ma.setflags(write=False)
        object.__setattr__(self, "ar_coeffs", ar)
        object.__setattr__(self, "ma_coeffs", ma)

    @property
    def mean(self) -> float:
        return float(self.intercept / (1.0 - self.ar_coeffs.sum()))


# ---------------------------------------------------------------------------
# Standardization plumbing


def _check_finite(X, y):
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise NumericError("non-finite values in fitting inputs")


def _standardize_design(X):
    """Column means/sds (ddof=0) and the standardized matrix; zero-variance
    columns are flagged for dropping."""
    X = np.asarray(X, dtype=float)
    means = X.mean(axis=0)
    sds = X.std(axis=0)
    dropped = np.flatnonzero(sds <= 0)
    safe = np.where(sds > 0, sds, 1.0)
    Z = (X - means) / safe
    Z[:, dropped] = 0.0
    return Z, means, safe, tuple(int(j) for j in dropped)


# ---------------------------------------------------------------------------
# Lasso / elastic net


def _soft(z, t):
    return np.sign(z) * max(abs(z) - t, 0.0)


def _cd_solve(Z, yc, lam, alpha, beta0=None, active_cols=None):
    """Coordinate descent on standardized columns ((1/n)||z_j||^2 == 1)."""
    n, p = Z.shape
    beta = np.zeros(p) if beta0 is None else beta0.copy()
    r = yc - Z @ beta
    l1 = lam * alpha
    l2 = lam * (1.0 - alpha)
    usable = np.ones(p, dtype=bool)
    norm2 = (Z * Z).sum(axis=0) / n
    usable[norm2 <= 0] = False
    cols = np.flatnonzero(usable)

    def sweep(idx):
        delta = 0.0
        nonlocal r
        for j in idx:
            bj = beta[j]
            zj = Z[:, j]
            g = (zj @ r) / n + norm2[j] * bj
            bnew = _soft(g, l1) / (norm2[j] + l2)
            if bnew != bj:
                r += zj * (bj - bnew)
                beta[j] = bnew
                delta = max(delta, abs(bnew - bj))
        return delta

    def objective(b):
        rr = yc - Z @ b
        return ((rr @ rr) / (2.0 * n) + l1 * np.abs(b).sum()
                + 0.5 * l2 * (b @ b))

    def subspace_solve():
        # exact minimizer for the current active signs; large active sets
        # converge in a few of these where plain sweeps need thousands.
        # Accepted only if it lowers the penalized objective, so the full
        # sweep remains the convergence arbiter.
        nonlocal r
        act = np.flatnonzero(beta != 0)
        if act.size == 0:
            return
        s = np.sign(beta[act])
        Za = Z[:, act]
        G = Za.T @ Za / n + l2 * np.eye(act.size)
        try:
            b = np.linalg.solve(G, Za.T @ yc / n - l1 * s)
        except np.linalg.LinAlgError:
            return
        b[np.sign(b) != s] = 0.0
        cand = beta.copy()
        cand[act] = b
        if objective(cand) < objective(beta):
            beta[:] = cand
            r = yc - Z @ beta

    obj_prev = np.inf
    stalled = 0
    for _ in range(CD_MAX_SWEEPS):
        delta = sweep(cols)
        if delta < CD_TOL:
            break
        # polish the active set before re-checking all columns
        for _ in range(50):
            subspace_solve()
            act = np.flatnonzero(beta != 0)
            if act.size == 0 or sweep(act) < CD_TOL:
                break
        # near-duplicate columns can slosh coefficients indefinitely with no
        # objective change; machine-precision stagnation counts as converged
        obj = objective(beta)
        stalled = stalled + 1 if obj > obj_prev - 1e-14 * (1.0 + abs(obj)) else 0
        if stalled >= 3:
            break
        obj_prev = obj
    if l1 > 0:
        # reduction-order rounding can leave machine-epsilon coefficients on
        # columns that sit exactly at the penalty boundary (e.g. lam ==
        # lambda_max); they are zero in exact arithmetic
        beta[np.abs(beta) <= 1e-12 * l1] = 0.0
    return beta


def kkt_violation(Z, yc, beta, lam, alpha=1.0) -> float:
    """Max violation of the elastic-net stationarity conditions."""
    n = Z.shape[0]
    r = yc - Z @ beta
    g = Z.T @ r / n
    l1 = lam * alpha
    l2 = lam * (1.0 - alpha)
    active = beta != 0
    v = 0.0
    if np.any(active):
        v = np.max(np.abs(g[active] - l2 * beta[active] - l1 * np.sign(beta[active])))
    if np.any(~active):
        v = max(v, float(np.max(np.maximum(np.abs(g[~active]) - l1, 0.0))))
    return float(v)


def penalized_objective(Z, yc, beta, lam, alpha=1.0) -> float:
    n = Z.shape[0]
    r = yc - Z @ beta
    return float((r @ r) / (2 * n)
                 + lam * (alpha * np.abs(beta).sum()
                          + 0.5 * (1 - alpha) * (beta @ beta)))


def fit_elastic_net(X, y, lam, alpha, calibration_range=None,
                    method=None) -> LinearModel:
    """Elastic-net fit by coordinate descent (alpha=1: lasso, alpha=0: ridge)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    _check_finite(X, y)
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError("alpha must lie in [0, 1]")
    if lam < 0:
        raise ConfigurationError("lambda must be nonnegative")

    Z, means, sds, dropped = _standardize_design(X)
    ybar = float(y.mean())
    yc = y - ybar

    if lam == 0.0:
        n, p = Z.shape
        if p >= n:
            # follow the warm-started path to an effectively unpenalized fit;
            # plain least squares is non-unique here
            lmax = float(np.max(np.abs(Z.T @ yc)) / n) or 1.0
            beta = None
            for l in np.geomspace(lmax, lmax * 1e-10, 60):
                beta = _cd_solve(Z, yc, l, alpha, beta0=beta)
        else:
            beta = np.linalg.lstsq(Z, yc, rcond=None)[0]
            beta[list(dropped)] = 0.0
    else:
        beta = _cd_solve(Z, yc, lam, alpha)
        v = kkt_violation(Z, yc, beta, lam, alpha)
        if v > KKT_TOL * max(1.0, lam):
            raise NumericError(f"KKT violation {v:.3g} exceeds tolerance")

    return LinearModel(
        intercept=ybar, coefficients=beta, column_means=means, column_sds=sds,
        method=method or ("lasso" if alpha == 1.0 else
                          "ridge" if alpha == 0.0 else "elastic_net"),
        penalty=(float(lam), float(alpha)),
        calibration_range=calibration_range, dropped=dropped,
    )


def fit_lasso(X, y, lam, calibration_range=None) -> LinearModel:
    return fit_elastic_net(X, y, lam, 1.0, calibration_range, method="lasso")


def lambda_max(X, y) -> float:
    """Smallest penalty at which the lasso solution is identically zero."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    _check_finite(X, y)
    if float(np.asarray(y).std()) == 0.0:
        raise DegenerateSeriesError("constant response")
    Z, _, _, _ = _standardize_design(X)
    return float(np.max(np.abs(Z.T @ (y - y.mean()))) / len(y))


def tingley_lambda(X, y) -> float:
    """0.05 times the smallest penalty for which all coefficients are zero."""
    return 0.05 * lambda_max(X, y)


def default_lambda_grid(lmax, n_points=30, ratio=1e-2):
    return np.geomspace(lmax, lmax * ratio, n_points)


def select_lambda_cv(X, y, folds=5, repetitions=10, grid=None,
                     seed: Seed = None, alpha=1.0):
    """Pick lambda by repeated k-fold CV; ties break toward the larger lambda.

    Returns (lambda, curve) where curve is a list of (lambda, mean held-out
    MSE) over the descending grid.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    n = len(y)
    if n < folds:
        raise ConfigurationError("calibration shorter than fold count")
    if grid is None:
        grid = default_lambda_grid(lambda_max(X, y))
    grid = np.sort(np.asarray(grid, dtype=float))[::-1]
    if grid.size == 0:
        raise ConfigurationError("empty lambda grid")
    seed = seed or Seed(0)

    total = np.zeros(grid.size)
    count = 0
    for rep in range(repetitions):
        rng = seed.derive("cv", rep).generator()
        order = rng.permutation(n)
        fold_ids = np.arange(n) % folds
        for k in range(folds):
            val = order[fold_ids == k]
            trn = order[fold_ids != k]
            Zt, means, sds, dropped = _standardize_design(X[trn])
            yt = y[trn]
            ybar = yt.mean()
            yc = yt - ybar
            Zv = (X[val] - means) / sds
            Zv[:, list(dropped)] = 0.0
            beta = None
            for g, lam in enumerate(grid):
                beta = _cd_solve(Zt, yc, lam, alpha, beta0=beta)
                err = y[val] - (ybar + Zv @ beta)
                total[g] += float(err @ err) / len(val)
            count += 1
    mse = total / count
    best = int(np.argmin(mse))  # grid is descending: first min is largest lambda
    curve = list(zip(grid.tolist(), mse.tolist()))
    return float(grid[best]), curve


def lasso_objective_oracle(X, y, lam, max_iter=20_000):
    """Independent optimum of the lasso objective for cross-checking.

    Splits beta = b+ - b- with b+/- >= 0, turning the L1 term linear, and
    runs projected (bound-constrained) gradient descent via L-BFGS-B.  Shares
    no code path with coordinate descent.  Returns the achieved objective.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    Z, _, _, _ = _standardize_design(X)
    yc = y - y.mean()
    n, p = Z.shape

    def fg(u):
        b = u[:p] - u[p:]
        r = yc - Z @ b
        f = (r @ r) / (2 * n) + lam * u.sum()
        g = -(Z.T @ r) / n
        return f, np.r_[g + lam, -g + lam]

    res = optimize.minimize(
        fg, np.zeros(2 * p), jac=True, method="L-BFGS-B",
        bounds=[(0.0, None)] * (2 * p),
        options={"maxiter": max_iter, "ftol": 1e-16, "gtol": 1e-12},
    )
    return float(res.fun)


# ---------------------------------------------------------------------------
# PCA and PC-OLS


def _pca_core(Xcal):
    """SVD of an already-standardized calibration block."""
    U, s, Vt = np.linalg.svd(Xcal, full_matrices=False)
    # sign convention: largest-magnitude loading entry positive
    for k in range(Vt.shape[0]):
        j = np.argmax(np.abs(Vt[k]))
        if Vt[k, j] < 0:
            Vt[k] *= -1.0
            U[:, k] *= -1.0
    return U, s, Vt


def _matrix_parts(X, period):
    if isinstance(X, ProxyMatrix):
        if period is None:
            period = (X.start_year, X.end_year)
        i, j = X.index(period[0]), X.index(period[1])
        return X.values, X.missing, slice(i, j + 1)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return X, ~np.isfinite(X), slice(0, X.shape[0])


def pca_decompose(X, K, period=None) -> PcBasis:
    """PCA of columns standardized (sample sd) over the given period.

    Eigenvalues are the squared singular values of the standardized
    calibration block, so the calibration-score Gram matrix is
    diag(eigenvalues).  Scores extend over every year where all series are
    present; other years are masked.
    """
    values, missing, cal = _matrix_parts(X, period)
    sub = values[cal]
    sub_missing = missing[cal]
    if sub_missing.any():
        raise DegenerateSeriesError("missing entries inside the PCA period")
    n, p = sub.shape
    if not 1 <= K <= min(n, p):
        raise ConfigurationError(f"K={K} outside [1, {min(n, p)}]")

    means = sub.mean(axis=0)
    sds = sub.std(axis=0, ddof=1)
    if np.any(sds <= 0):
        raise DegenerateSeriesError("zero-variance column inside the PCA period")
    Zcal = (sub - means) / sds
    U, s, Vt = _pca_core(Zcal)
    loadings = Vt[:K].T
    eigenvalues = s[:K] ** 2

    Zall = (values - means) / sds
    score_missing = missing.any(axis=1)
    Zall = np.where(missing, 0.0, Zall)
    scores = Zall @ loadings
    return PcBasis(loadings=loadings, scores=scores, eigenvalues=eigenvalues,
                   column_means=means, column_sds=sds, score_missing=score_missing)


def fit_pc_ols(X, y, K, groups=None, period=None,
               calibration_range=None) -> LinearModel:
    """OLS of y on the top-K principal-component scores, flattened back to a
    linear model on the original columns.

    With group labels, PCA runs separately per group, the per-group top-K
    scores are pooled, and OLS runs on the pooled scores.
    """
    values, missing, cal = _matrix_parts(X, period)
    y = np.asarray(y, dtype=float)
    if y.shape[0] != values[cal].shape[0]:
        raise ConfigurationError("y must align with the calibration rows")
    _check_finite(values[cal], y)

    p = values.shape[1]
    if groups is None:
        group_ids = [None]
        members = {None: np.arange(p)}
    else:
        groups = np.asarray(groups)
        if groups.size != p:
            raise ConfigurationError("one group label per column required")
        group_ids = list(dict.fromkeys(groups.tolist()))
        members = {g: np.flatnonzero(groups == g) for g in group_ids}

    # pooled standardized-scale coefficient vector over all columns
    flat_coef = np.zeros(p)
    col_means = np.zeros(p)
    col_sds = np.ones(p)
    score_blocks = []
    bases = []
    for g in group_ids:
        idx = members[g]
        sub = values[:, idx]
        basis = pca_decompose(sub[cal], min(K, len(idx)), period=None)
        bases.append((idx, basis))
        score_blocks.append(basis.scores)
        col_means[idx] = basis.column_means
        col_sds[idx] = basis.column_sds

    S = np.hstack(score_blocks)  # calibration scores, pooled
    D = np.column_stack([np.ones(S.shape[0]), S])
    coef, *_ = np.linalg.lstsq(D, y, rcond=None)
    a = float(coef[0])
    pos = 1
    for idx, basis in bases:
        k = basis.loadings.shape[1]
        flat_coef[idx] = basis.loadings @ coef[pos : pos + k]
        pos += k

    return LinearModel(intercept=a, coefficients=flat_coef,
                       column_means=col_means, column_sds=col_sds,
                       method="pc_ols", penalty=(0.0, 0.0),
                       calibration_range=calibration_range)


# ---------------------------------------------------------------------------
# Composite-plus-scale


def fit_cps(X: ProxyMatrix, y: AnnualSeries, weight_mode="latitude_cosine",
            calibration=None) -> CpsModel:
    """Composite-plus-scale fit over the calibration range.

    latitude_cosine: weight = cos(latitude) for Northern-Hemisphere series,
    zero for Southern-Hemisphere ones.  abs_correlation: weight = |corr| of
    the series with the target over calibration.
    """
    if calibration is None:
        calibration = (max(X.start_year, y.start_year),
                       min(X.end_year, y.end_year))
    lo, hi = calibration
    Xc, Xc_missing = X.block(lo, hi)
    yc = y.slice(lo, hi)
    yv = yc.values[~yc.missing]
    if yv.size < 2:
        raise DegenerateSeriesError("target needs >= 2 calibration values")

    p = X.n_series
    means = np.zeros(p)
    sds = np.ones(p)
    ok = np.zeros(p, dtype=bool)
    for j in range(p):
        v = Xc[:, j][~Xc_missing[:, j]]
        if v.size >= 2 and v.std(ddof=1) > 0:
            means[j] = v.mean()
            sds[j] = v.std(ddof=1)
            ok[j] = True

    if weight_mode == "latitude_cosine":
        lat = np.array([c.latitude for c in X.columns])
        w = np.where(lat >= 0, np.cos(np.deg2rad(lat)), 0.0)
    elif weight_mode == "abs_correlation":
        w = np.zeros(p)
        for j in range(p):
            both = ~Xc_missing[:, j] & ~yc.missing
            if both.sum() >= 3:
                a, b = Xc[both, j], yc.values[both]
                if a.std() > 0 and b.std() > 0:
                    w[j] = abs(float(np.corrcoef(a, b)[0, 1]))
    else:
        raise ConfigurationError(f"unknown weight mode {weight_mode!r}")
    w = np.where(ok, w, 0.0)
    if not np.any(w > 0):
        raise DegenerateSeriesError("all CPS weights are zero")

    model = CpsModel(weights=w, composite_mean=0.0, composite_sd=1.0,
                     target_mean=float(yv.mean()), target_sd=float(yv.std(ddof=1)),
                     weight_mode=weight_mode, column_means=means, column_sds=sds,
                     calibration_range=(int(lo), int(hi)))
    rows = ~yc.missing
    comp = model.composite(Xc[rows], Xc_missing[rows])
    csd = float(comp.std(ddof=1))
    if csd <= 0:
        raise DegenerateSeriesError("degenerate composite over calibration")
    return CpsModel(weights=w, composite_mean=float(comp.mean()), composite_sd=csd,
                    target_mean=model.target_mean, target_sd=model.target_sd,
                    weight_mode=weight_mode, column_means=means, column_sds=sds,
                    calibration_range=(int(lo), int(hi)))


# ---------------------------------------------------------------------------
# ARMA and intercept baselines


def _css_residuals(y, c, ar, ma):
    """Conditional-sum-of-squares innovation recursion."""
    p, q = len(ar), len(ma)
    n = len(y)
    e = np.zeros(n)
    for t in range(n):
        pred = c
        for i in range(1, p + 1):
            if t - i >= 0:
                pred += ar[i - 1] * y[t - i]
        for j in range(1, q + 1):
            if t - j >= 0:
                pred += ma[j - 1] * e[t - j]
        e[t] = y[t] - pred
    start = max(p, q)
    return e[start:]


def _arma_psi(ar, ma, n_terms):
    p, q = len(ar), len(ma)
    psi = np.zeros(n_terms)
    psi[0] = 1.0
    for j in range(1, n_terms):
        acc = ma[j - 1] if j <= q else 0.0
        for i in range(1, min(p, j) + 1):
            acc += ar[i - 1] * psi[j - i]
        psi[j] = acc
    return psi


def _ar_acovf(ar, sigma2, max_lag):
    """Exact AR(p) autocovariance from the Yule-Walker equations."""
    p = len(ar)
    A = np.zeros((p + 1, p + 1))
    b = np.zeros(p + 1)
    b[0] = sigma2
    for k in range(p + 1):
        A[k, k] += 1.0
        for i in range(1, p + 1):
            A[k, abs(k - i)] -= ar[i - 1]
    g = np.linalg.solve(A, b)
    gamma = np.empty(max_lag + 1)
    gamma[: min(p, max_lag) + 1] = g[: min(p, max_lag) + 1]
    for k in range(p + 1, max_lag + 1):
        gamma[k] = sum(ar[i - 1] * gamma[k - i] for i in range(1, p + 1))
    return gamma


def arma_acovf(ar, ma, sigma2, max_lag, n_terms=2048) -> np.ndarray:
    """Autocovariance gamma(0..max_lag); exact for pure AR, truncated MA(inf)
    expansion otherwise."""
    ar = np.asarray(ar, float)
    ma = np.asarray(ma, float)
    if ma.size == 0 and ar.size > 0:
        return _ar_acovf(ar, sigma2, max_lag)
    psi = _arma_psi(ar, ma, n_terms + max_lag)
    return np.array([sigma2 * float(psi[: n_terms] @ psi[k : n_terms + k])
                     for k in range(max_lag + 1)])


def _kalman_loglik(y, c, ar, ma):
    """Exact Gaussian log-likelihood with sigma^2 concentrated out."""
    p, q = len(ar), len(ma)
    m = max(p, q + 1)
    T = np.zeros((m, m))
    T[: p, 0] = ar
    T[: m - 1, 1:] = np.eye(m - 1)
    R = np.zeros(m)
    R[0] = 1.0
    R[1 : q + 1] = ma
    RRt = np.outer(R, R)
    try:
        P = solve_discrete_lyapunov(T, RRt)
    except Exception:
        return -np.inf
    mu = c / (1.0 - np.sum(ar)) if abs(1.0 - np.sum(ar)) > 1e-12 else 0.0
    a = np.zeros(m)
    yd = y - mu
    n = len(y)
    logF = 0.0
    ssq = 0.0
    for t in range(n):
        F = P[0, 0]
        if F <= 0:
            return -np.inf
        v = yd[t] - a[0]
        logF += np.log(F)
        ssq += v * v / F
        K = P[:, 0] / F
        a = T @ (a + K * v)
        P = T @ (P - np.outer(K, P[0, :])) @ T.T + RRt
    sigma2 = ssq / n
    if sigma2 <= 0:
        return -np.inf
    return -0.5 * (n * (np.log(2 * np.pi) + 1.0) + logF + n * np.log(sigma2))


def _ar_exact_loglik(y, c, ar, ma):
    """Exact Gaussian AR(p) log-likelihood (sigma^2 concentrated out):
    stationary density of the first p values times conditional normals."""
    p = len(ar)
    n = len(y)
    denom = 1.0 - np.sum(ar)
    if abs(denom) < 1e-12:
        return -np.inf
    mu = c / denom
    if p == 0:
        r = y - mu
        sigma2 = float(r @ r) / n
        return -0.5 * n * (np.log(2 * np.pi) + 1.0 + np.log(sigma2))
    gamma = arma_acovf(ar, np.array([]), 1.0, p - 1)
    V = gamma[np.abs(np.subtract.outer(np.arange(p), np.arange(p)))]
    sign, logdetV = np.linalg.slogdet(V)
    if sign <= 0:
        return -np.inf
    r1 = y[:p] - mu
    q1 = float(r1 @ np.linalg.solve(V, r1))
    e = y[p:] - c
    for i in range(1, p + 1):
        e = e - ar[i - 1] * y[p - i : n - i]
    sigma2 = (q1 + float(e @ e)) / n
    if sigma2 <= 0:
        return -np.inf
    return -0.5 * (n * (np.log(2 * np.pi) + 1.0) + logdetV + n * np.log(sigma2))


def _project_stationary(ar):
    """Scale AR coefficients toward zero until all roots leave the unit circle."""
    ar = np.asarray(ar, dtype=float)
    scale = 1.0
    for _ in range(100):
        if _ar_roots_stationary(ar * scale):
            return ar * scale, scale < 1.0
        scale *= 0.95
    return np.zeros_like(ar), True


def fit_arma(y, p, q, calibration_range=None, refine=True) -> ArmaModel:
    """Fit ARMA(p, q) with intercept: conditional sum of squares, then exact
    Gaussian likelihood refinement.  Nonstationary estimates are projected
    back to stationarity and flagged."""
    if isinstance(y, AnnualSeries):
        if calibration_range is None:
            calibration_range = (y.start_year, y.end_year)
        y = y.values[~y.missing]
    y = np.asarray(y, dtype=float)
    _check_finite(y, y)
    n = len(y)
    if n < p + q + 10:
        raise DegenerateSeriesError(f"series too short for ARMA({p},{q})")

    if p == 0 and q == 0:
        return ArmaModel(0, 0, np.array([]), np.array([]),
                         intercept=float(y.mean()),
                         innovation_sd=float(y.std(ddof=1)),
                         calibration_range=calibration_range)

    # CSS stage: pure AR by OLS on lags, otherwise numerical CSS minimization
    if q == 0:
        D = np.column_stack([np.ones(n - p)]
                            + [y[p - i : n - i] for i in range(1, p + 1)])
        coef, *_ = np.linalg.lstsq(D, y[p:], rcond=None)
        c0, ar0, ma0 = float(coef[0]), coef[1:], np.array([])
    else:
        # initialize AR part from an AR(p) fit, MA at zero
        if p > 0:
            D = np.column_stack([np.ones(n - p)]
                                + [y[p - i : n - i] for i in range(1, p + 1)])
            coef, *_ = np.linalg.lstsq(D, y[p:], rcond=None)
            c0, ar0 = float(coef[0]), coef[1:]
        else:
            c0, ar0 = float(y.mean()), np.array([])
        ma0 = np.zeros(q)

        def css(theta):
            c, ar, ma = theta[0], theta[1 : 1 + p], theta[1 + p :]
            if not _ar_roots_stationary(ar):
                return 1e12
            e = _css_residuals(y, c, ar, ma)
            return float(e @ e)

        res = optimize.minimize(css, np.r_[c0, ar0, ma0], method="Nelder-Mead",
                                options={"maxiter": 4000, "xatol": 1e-8,
                                         "fatol": 1e-10})
        c0 = float(res.x[0])
        ar0 = res.x[1 : 1 + p]
        ma0 = res.x[1 + p :]

    ar0, projected = _project_stationary(ar0)

    if refine:
        loglik = _ar_exact_loglik if q == 0 else _kalman_loglik

        def nll(theta):
            c, ar, ma = theta[0], theta[1 : 1 + p], theta[1 + p :]
            if not _ar_roots_stationary(ar):
                return 1e12
            ll = loglik(y, c, ar, ma)
            return 1e12 if not np.isfinite(ll) else -ll

        res = optimize.minimize(nll, np.r_[c0, ar0, ma0], method="Nelder-Mead",
                                options={"maxiter": 2000, "xatol": 1e-7,
                                         "fatol": 1e-8})
        if np.isfinite(res.fun) and res.fun < 1e11:
            c0 = float(res.x[0])
            ar0 = res.x[1 : 1 + p]
            ma0 = res.x[1 + p :]
            ar0, proj2 = _project_stationary(ar0)
            projected = projected or proj2

    e = _css_residuals(y, c0, ar0, ma0)
    sd = float(np.sqrt((e @ e) / max(len(e) - (1 + p + q), 1)))
    return ArmaModel(p, q, ar0, ma0, intercept=c0,
                     innovation_sd=max(sd, 1e-12),
                     calibration_range=calibration_range,
                     stationarity_projected=projected)


def fit_intercept(y, calibration_range=None) -> LinearModel:
    """Intercept-only baseline: predicts the calibration mean everywhere."""
    if isinstance(y, AnnualSeries):
        if calibration_range is None:
            calibration_range = (y.start_year, y.end_year)
        y = y.values[~y.missing]
    y = np.asarray(y, dtype=float)
    _check_finite(y, y)
    return LinearModel(intercept=float(y.mean()),
                       coefficients=np.array([]), column_means=np.array([]),
                       column_sds=np.array([]), method="intercept",
                       penalty=(0.0, 0.0), calibration_range=calibration_range)


# ---------------------------------------------------------------------------
# Uniform prediction


def arma_conditional_mean(model: ArmaModel, history: AnnualSeries,
                          years) -> np.ndarray:
    """Conditional expectation of the requested years given the non-missing
    history, via Gaussian conditioning on the ARMA autocovariance.  Interior
    blocks condition on both flanks, extrapolation blocks on one side."""
    lo, hi = int(years[0]), int(years[1])
    req = np.arange(lo, hi + 1)
    obs_years = history.years[~history.missing]
    obs_vals = history.values[~history.missing]
    keep = ~np.isin(obs_years, req)
    obs_years, obs_vals = obs_years[keep], obs_vals[keep]
    if obs_years.size == 0:
        raise CoverageError("no observed history to condition on")

    max_lag = int(max(abs(req[:, None] - obs_years[None, :]).max(),
                      abs(obs_years[:, None] - obs_years[None, :]).max()))
    gamma = arma_acovf(model.ar_coeffs, model.ma_coeffs,
                       model.innovation_sd**2, max_lag)
    mu = model.mean
    Soo = gamma[np.abs(obs_years[:, None] - obs_years[None, :])]
    Sto = gamma[np.abs(req[:, None] - obs_years[None, :])]
    Soo = Soo + 1e-10 * gamma[0] * np.eye(len(obs_years))
    return mu + Sto @ np.linalg.solve(Soo, obs_vals - mu)


def predict(model, X: ProxyMatrix = None, y_history: AnnualSeries = None,
            years=None) -> AnnualSeries:
    """Uniform prediction surface over a year range.

    Linear and CPS models read proxies from X; ARMA models read the target
    history.  Years whose inputs are missing come back masked; a range with
    no usable inputs at all raises CoverageError.
    """
    if years is None:
        raise ConfigurationError("years range is required")
    lo, hi = int(years[0]), int(years[1])
    n = hi - lo + 1

    if isinstance(model, ArmaModel):
        if y_history is None:
            raise CoverageError("ARMA prediction requires the target history")
        vals = arma_conditional_mean(model, y_history, (lo, hi))
        return AnnualSeries(lo, vals)

    if isinstance(model, LinearModel) and model.n_columns == 0:
        return AnnualSeries(lo, np.full(n, model.intercept))

    if X is None:
        raise CoverageError("proxy matrix required for this model")
    if lo < X.start_year or hi > X.end_year:
        raise CoverageError(
            f"years {lo}..{hi} outside proxy matrix {X.start_year}..{X.end_year}"
        )
    block, block_missing = X.block(lo, hi)

    if isinstance(model, LinearModel):
        if model.n_columns != X.n_series:
            raise ConfigurationError("model and matrix column counts differ")
        used = model.coefficients != 0
        row_missing = (block_missing & used).any(axis=1)
        safe = np.where(block_missing, 0.0, block)
        vals = model.design_predict(safe)
        if row_missing.all():
            raise CoverageError("no year has complete inputs")
        vals = np.where(row_missing, np.nan, vals)
        return AnnualSeries(lo, vals, row_missing)

    if isinstance(model, CpsModel):
        vals = model.design_predict(block, block_missing)
        return AnnualSeries(lo, vals)

    raise ConfigurationError(f"unsupported model type {type(model).__name__}")


# ---------------------------------------------------------------------------
# Serialization

MODEL_SCHEMA_VERSION = 1


def fingerprint_arrays(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(np.asarray(a, dtype=float))
        h.update(a.tobytes())
        h.update(repr(a.shape).encode())
    return h.hexdigest()


def model_to_json(model, input_fingerprint=None) -> str:
    d = {"schema_version": MODEL_SCHEMA_VERSION,
         "input_fingerprint": input_fingerprint}
    if isinstance(model, LinearModel):
        d.update(model_type="linear", method=model.method,
                 intercept=model.intercept,
                 coefficients=model.coefficients.tolist(),
                 column_means=model.column_means.tolist(),
                 column_sds=model.column_sds.tolist(),
                 penalty={"lambda": model.penalty[0], "alpha": model.penalty[1]},
                 calibration_range=model.calibration_range,
                 dropped=list(model.dropped))
    elif isinstance(model, CpsModel):
        d.update(model_type="cps", weight_mode=model.weight_mode,
                 weights=model.weights.tolist(),
                 composite_mean=model.composite_mean,
                 composite_sd=model.composite_sd,
                 target_mean=model.target_mean, target_sd=model.target_sd,
                 column_means=model.column_means.tolist(),
                 column_sds=model.column_sds.tolist(),
                 calibration_range=model.calibration_range)
    elif isinstance(model, ArmaModel):
        d.update(model_type="arma", p=model.p, q=model.q,
                 ar_coeffs=model.ar_coeffs.tolist(),
                 ma_coeffs=model.ma_coeffs.tolist(),
                 intercept=model.intercept, innovation_sd=model.innovation_sd,
                 calibration_range=model.calibration_range,
                 stationarity_projected=model.stationarity_projected)
    else:
        raise ConfigurationError(f"cannot serialize {type(model).__name__}")
    return json.dumps(d, sort_keys=True)


def model_from_json(text: str):
    d = json.loads(text)
    if d.get("schema_version") != MODEL_SCHEMA_VERSION:
        raise ConfigurationError("unsupported model schema version")
    cal = tuple(d["calibration_range"]) if d.get("calibration_range") else None
    kind = d["model_type"]
    if kind == "linear":
        return LinearModel(intercept=d["intercept"],
                           coefficients=np.array(d["coefficients"]),
                           column_means=np.array(d["column_means"]),
                           column_sds=np.array(d["column_sds"]),
                           method=d["method"],
                           penalty=(d["penalty"]["lambda"], d["penalty"]["alpha"]),
                           calibration_range=cal,
                           dropped=tuple(d["dropped"]))
    if kind == "cps":
        return CpsModel(weights=np.array(d["weights"]),
                        composite_mean=d["composite_mean"],
                        composite_sd=d["composite_sd"],
                        target_mean=d["target_mean"], target_sd=d["target_sd"],
                        weight_mode=d["weight_mode"],
                        column_means=np.array(d["column_means"]),
                        column_sds=np.array(d["column_sds"]),
                        calibration_range=cal)
    if kind == "arma":
        return ArmaModel(d["p"], d["q"], np.array(d["ar_coeffs"]),
                         np.array(d["ma_coeffs"]), intercept=d["intercept"],
                         innovation_sd=d["innovation_sd"],
                         calibration_range=cal,
                         stationarity_projected=d["stationarity_projected"])
    raise ConfigurationError(f"unknown model type {kind!r}")
