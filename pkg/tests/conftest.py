import numpy as np
import pytest

from proxyrecon.data import AnnualSeries, ProxyMatrix, SeriesMeta
from proxyrecon.seeding import Seed


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def seed():
    return Seed(12345)


def make_series(values, start_year=1900):
    return AnnualSeries(start_year, np.asarray(values, dtype=float))


def make_matrix(values, start_year=1900, latitudes=None):
    values = np.asarray(values, dtype=float)
    p = values.shape[1]
    lat = latitudes if latitudes is not None else [45.0] * p
    cols = tuple(SeriesMeta(name=f"s{j}", latitude=lat[j]) for j in range(p))
    return ProxyMatrix(start_year, cols, values)


def ar1_series(n, phi, sd=1.0, start_year=1900, seed=0):
    rng = np.random.default_rng(seed)
    x = np.zeros(n)
    x[0] = rng.normal(0, sd / np.sqrt(1 - phi**2))
    for t in range(1, n):
        x[t] = phi * x[t - 1] + sd * rng.normal()
    return AnnualSeries(start_year, x)
