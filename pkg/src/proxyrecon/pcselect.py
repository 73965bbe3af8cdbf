"""Principal-component retention criteria.

All criteria look only at the eigenvalue spectrum of the predictor matrix,
never at the response; response-aware selection belongs to cross-validation.
Includes the documented erroneous variant that thresholds the cumulative
share of *squared* eigenvalues (total variance squared) instead of variance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ConfigurationError

CRITERIA = ("variance_threshold", "variance_threshold_squared_BUG",
            "broken_stick", "scree_gap")


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray

    def __post_init__(self):
        ev = np.asarray(self.eigenvalues, dtype=float)
        if ev.ndim != 1 or ev.size < 1:
            raise ConfigurationError("spectrum must be a nonempty 1-D sequence")
        if np.any(ev < 0):
            raise ConfigurationError("eigenvalues must be nonnegative")
        if np.any(np.diff(ev) > 0):
            raise ConfigurationError("eigenvalues must be nonincreasing")
        if ev[0] <= 0:
            raise ConfigurationError("need at least one strictly positive eigenvalue")
        ev.setflags(write=False)
        object.__setattr__(self, "eigenvalues", ev)

    def __len__(self):
        return self.eigenvalues.size


def _threshold_k(weights, threshold):
    shares = np.cumsum(weights) / weights.sum()
    return int(np.searchsorted(shares, threshold - 1e-12) + 1)


def select_k(spectrum: Spectrum, criterion: str, threshold: float = 0.9) -> int:
    """Number of components retained under the given criterion.

    variance_threshold: smallest K whose cumulative eigenvalue share reaches
    the threshold.  variance_threshold_squared_BUG: the same rule applied to
    squared eigenvalues (the documented mistake).  broken_stick: count of
    shares exceeding the broken-stick expectation.  scree_gap: K at the
    largest consecutive eigenvalue drop.
    """
    if criterion not in CRITERIA:
        raise ConfigurationError(f"unknown criterion {criterion!r}")
    ev = spectrum.eigenvalues
    m = ev.size

    if criterion in ("variance_threshold", "variance_threshold_squared_BUG"):
        if not 0.0 < threshold <= 1.0:
            raise ConfigurationError("threshold must lie in (0, 1]")
        w = ev**2 if criterion.endswith("BUG") else ev
        return min(_threshold_k(w, threshold), m)

    if criterion == "broken_stick":
        shares = ev / ev.sum()
        # expected share of the k-th largest stick piece, k = 1..m
        expect = np.array([np.sum(1.0 / np.arange(k, m + 1)) / m
                           for k in range(1, m + 1)])
        k = 0
        while k < m and shares[k] > expect[k]:
            k += 1
        return max(k, 1)

    # scree_gap
    if m == 1:
        return 1
    drops = ev[:-1] - ev[1:]
    return int(np.argmax(drops) + 1)


def criteria_table(spectrum: Spectrum, thresholds=(0.7, 0.8, 0.9)):
    """Rows of (criterion, threshold, K) across the full criterion grid."""
    rows = []
    for th in thresholds:
        rows.append(("variance_threshold", th,
                     select_k(spectrum, "variance_threshold", th)))
        rows.append(("variance_threshold_squared_BUG", th,
                     select_k(spectrum, "variance_threshold_squared_BUG", th)))
    rows.append(("broken_stick", None, select_k(spectrum, "broken_stick")))
    rows.append(("scree_gap", None, select_k(spectrum, "scree_gap")))
    return rows
