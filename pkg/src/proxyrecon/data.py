"""Annual series / proxy matrix data model, CSV I/O, centering and holdout blocks.

Missing values are explicit mask bits, never sentinel numbers; every statistic
skips masked entries.  Years are integer AD and consecutive within any object.
All types are immutable after construction and all operations are pure.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np


class DataError(ValueError):
    """Base class for data-model errors."""


class ParseError(DataError):
    """Malformed input file (carries row/column context in the message)."""


class FormatError(DataError):
    """Structurally invalid input (non-monotone years, bad header, ...)."""


class ConfigurationError(DataError):
    """Invalid operation parameters (block length, window, ...)."""


class DegenerateSeriesError(DataError):
    """Operation undefined for this series (zero variance, empty reference)."""


# ---------------------------------------------------------------------------
# Types


def _freeze(a):
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class AnnualSeries:
    """A year-indexed scalar series with an explicit missing mask."""

    start_year: int
    values: np.ndarray
    missing: np.ndarray = None
    notes: tuple = ()

    def __post_init__(self):
        values = _freeze(np.asarray(self.values, dtype=float))
        if values.ndim != 1 or values.size < 1:
            raise FormatError("series must hold at least one value")
        missing = self.missing
        if missing is None:
            missing = ~np.isfinite(values)
        missing = _freeze(np.asarray(missing, dtype=bool))
        if missing.shape != values.shape:
            raise FormatError("missing mask length must match values")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "missing", missing)

    def __len__(self):
        return self.values.size

    @property
    def end_year(self) -> int:
        return self.start_year + len(self) - 1

    @property
    def years(self) -> np.ndarray:
        return np.arange(self.start_year, self.start_year + len(self))

    def index(self, year: int) -> int:
        if not (self.start_year <= year <= self.end_year):
            raise ConfigurationError(
                f"year {year} outside series range {self.start_year}..{self.end_year}"
            )
        return year - self.start_year

    def window(self, start_year: int, end_year: int) -> np.ndarray:
        """Non-missing values over [start_year, end_year]."""
        i, j = self.index(start_year), self.index(end_year)
        v = self.values[i : j + 1]
        return v[~self.missing[i : j + 1]]

    def slice(self, start_year: int, end_year: int) -> "AnnualSeries":
        i, j = self.index(start_year), self.index(end_year)
        return AnnualSeries(start_year, self.values[i : j + 1],
                            self.missing[i : j + 1], self.notes)


@dataclass(frozen=True)
class SeriesMeta:
    """Per-series metadata (latitude drives CPS weights; kind tags provenance)."""

    name: str
    latitude: float = 0.0
    longitude: float = 0.0
    kind: str = "proxy"  # proxy | pseudoproxy | local_temperature | external_prediction
    first_year: int = 0

    KINDS = ("proxy", "pseudoproxy", "local_temperature", "external_prediction")

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise FormatError(f"latitude {self.latitude} outside [-90, 90]")
        if self.kind not in self.KINDS:
            raise FormatError(f"unknown series kind {self.kind!r}")


@dataclass(frozen=True)
class ProxyMatrix:
    """Year x series matrix with per-series metadata and a missing mask."""

    start_year: int
    columns: tuple
    values: np.ndarray
    missing: np.ndarray = None

    def __post_init__(self):
        values = _freeze(np.asarray(self.values, dtype=float))
        if values.ndim != 2:
            raise FormatError("matrix values must be 2-D (years x series)")
        columns = tuple(self.columns)
        if values.shape[1] != len(columns):
            raise FormatError(
                f"{values.shape[1]} value columns vs {len(columns)} metadata entries"
            )
        missing = self.missing
        if missing is None:
            missing = ~np.isfinite(values)
        missing = _freeze(np.asarray(missing, dtype=bool))
        if missing.shape != values.shape:
            raise FormatError("missing mask shape must match values")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "columns", columns)
        object.__setattr__(self, "missing", missing)

    @property
    def n_years(self) -> int:
        return self.values.shape[0]

    @property
    def n_series(self) -> int:
        return self.values.shape[1]

    @property
    def end_year(self) -> int:
        return self.start_year + self.n_years - 1

    @property
    def years(self) -> np.ndarray:
        return np.arange(self.start_year, self.start_year + self.n_years)

    def index(self, year: int) -> int:
        if not (self.start_year <= year <= self.end_year):
            raise ConfigurationError(
                f"year {year} outside matrix range {self.start_year}..{self.end_year}"
            )
        return year - self.start_year

    def block(self, start_year: int, end_year: int):
        """(values, missing) over the inclusive year range."""
        i, j = self.index(start_year), self.index(end_year)
        return self.values[i : j + 1], self.missing[i : j + 1]

    def series(self, j: int) -> AnnualSeries:
        return AnnualSeries(self.start_year, self.values[:, j], self.missing[:, j])


@dataclass(frozen=True)
class HoldoutBlock:
    start_year: int
    end_year: int
    mode: str  # front | interior | back

    @property
    def length(self) -> int:
        return self.end_year - self.start_year + 1

    def years(self) -> np.ndarray:
        return np.arange(self.start_year, self.end_year + 1)


@dataclass(frozen=True)
class HoldoutScheme:
    """Constant-length contiguous holdout blocks inside a calibration range."""

    blocks: tuple
    calibration_range: tuple

    def __post_init__(self):
        blocks = tuple(self.blocks)
        lo, hi = self.calibration_range
        lengths = {b.length for b in blocks}
        if len(lengths) > 1:
            raise ConfigurationError("holdout blocks must share one length")
        for b in blocks:
            if b.start_year < lo or b.end_year > hi:
                raise ConfigurationError(
                    f"block {b.start_year}-{b.end_year} outside calibration {lo}-{hi}"
                )
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "calibration_range", (int(lo), int(hi)))


CENTERING_MODES = ("none", "anomaly_vs_observed", "anomaly_vs_fitted_BUG")


@dataclass(frozen=True)
class CenteringSpec:
    reference_period: tuple
    mode: str = "anomaly_vs_observed"

    def __post_init__(self):
        if self.mode not in CENTERING_MODES:
            raise ConfigurationError(f"unknown centering mode {self.mode!r}")
        a, b = self.reference_period
        if a > b:
            raise ConfigurationError("reference period start after end")
        object.__setattr__(self, "reference_period", (int(a), int(b)))


# ---------------------------------------------------------------------------
# CSV I/O
#
# Matrix format: header "year,<name>,...", one row per consecutive year,
# empty cell = missing.  Metadata sidecar: name,latitude,longitude,kind,
# first_year.  All floats written with 17 significant digits.


def _fmt(x: float) -> str:
    return "%.17g" % x


def load_matrix(path, sidecar=None) -> ProxyMatrix:
    """Read a year x series CSV; year gaps become fully-masked rows."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or len(rows) < 2:
        raise FormatError(f"{path}: need a header row and at least one data row")
    header = rows[0]
    if not header or header[0].strip().lower() != "year":
        raise FormatError(f"{path}: first column must be 'year'")
    names = [h.strip() for h in header[1:]]
    if not names:
        raise FormatError(f"{path}: no data columns")

    years, data = [], []
    for r, row in enumerate(rows[1:], start=2):
        if not row or all(c.strip() == "" for c in row):
            continue
        try:
            year = int(row[0])
        except ValueError:
            raise ParseError(f"{path}: row {r}, column 1: bad year {row[0]!r}")
        vals = np.full(len(names), np.nan)
        for c in range(len(names)):
            cell = row[c + 1].strip() if c + 1 < len(row) else ""
            if cell == "":
                continue
            try:
                vals[c] = float(cell)
            except ValueError:
                raise ParseError(
                    f"{path}: row {r}, column {c + 2}: malformed numeric cell {cell!r}"
                )
        years.append(year)
        data.append(vals)

    years = np.asarray(years)
    if np.any(np.diff(years) <= 0):
        raise FormatError(f"{path}: years must be strictly increasing")

    start = int(years[0])
    n = int(years[-1]) - start + 1
    values = np.full((n, len(names)), np.nan)
    values[years - start] = np.asarray(data)

    meta = {}
    if sidecar is not None:
        meta = {m.name: m for m in load_metadata(sidecar)}
    columns = []
    for j, name in enumerate(names):
        if name in meta:
            columns.append(meta[name])
        else:
            present = np.flatnonzero(np.isfinite(values[:, j]))
            fy = start + int(present[0]) if present.size else start
            columns.append(SeriesMeta(name=name, first_year=fy))
    return ProxyMatrix(start, columns, values)


def write_matrix(matrix: ProxyMatrix, path, sidecar=None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["year"] + [c.name for c in matrix.columns])
        for i, year in enumerate(matrix.years):
            row = [str(int(year))]
            for j in range(matrix.n_series):
                row.append("" if matrix.missing[i, j] else _fmt(matrix.values[i, j]))
            w.writerow(row)
    if sidecar is not None:
        write_metadata(matrix.columns, sidecar)


def load_metadata(path):
    out = []
    with open(path, newline="") as fh:
        for r, row in enumerate(csv.DictReader(fh), start=2):
            try:
                out.append(SeriesMeta(
                    name=row["name"],
                    latitude=float(row["latitude"]),
                    longitude=float(row["longitude"]),
                    kind=row["kind"],
                    first_year=int(row["first_year"]),
                ))
            except (KeyError, ValueError) as exc:
                raise ParseError(f"{path}: row {r}: {exc}")
    return out


def write_metadata(columns, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "latitude", "longitude", "kind", "first_year"])
        for c in columns:
            w.writerow([c.name, _fmt(c.latitude), _fmt(c.longitude),
                        c.kind, str(int(c.first_year))])


def load_series(path) -> AnnualSeries:
    """Read a two-column (year, value) CSV as an AnnualSeries."""
    m = load_matrix(path)
    if m.n_series != 1:
        raise FormatError(f"{path}: expected exactly one value column")
    return m.series(0)


def write_series(series: AnnualSeries, path, name="value") -> None:
    cols = (SeriesMeta(name=name, first_year=series.start_year),)
    write_matrix(
        ProxyMatrix(series.start_year, cols, series.values[:, None],
                    series.missing[:, None]),
        path,
    )


# ---------------------------------------------------------------------------
# Operations


def _reference_mean(series: AnnualSeries, reference_period) -> float:
    a, b = reference_period
    a = max(a, series.start_year)
    b = min(b, series.end_year)
    if a > b:
        raise DegenerateSeriesError("reference period does not overlap series")
    v = series.window(a, b)
    if v.size == 0:
        raise DegenerateSeriesError("reference period has no non-missing entries")
    return float(v.mean())


def center_anomaly(series: AnnualSeries, spec: CenteringSpec) -> AnnualSeries:
    """Subtract the observed mean over the reference period."""
    if spec.mode != "anomaly_vs_observed":
        raise ConfigurationError(
            f"center_anomaly requires mode anomaly_vs_observed, got {spec.mode!r}"
        )
    mu = _reference_mean(series, spec.reference_period)
    return replace(series, values=series.values - mu)


def center_fitted_bug(predictions: AnnualSeries, spec: CenteringSpec) -> AnnualSeries:
    """Subtract the mean of the *fitted values* over the reference period.

    This reproduces a documented erroneous centering procedure: when the
    predictions carry a nonzero mean residual over the reference period, the
    output is offset by exactly that residual at every year.  The result is
    tagged so downstream reports can flag it.
    """
    if spec.mode != "anomaly_vs_fitted_BUG":
        raise ConfigurationError(
            f"center_fitted_bug requires mode anomaly_vs_fitted_BUG, got {spec.mode!r}"
        )
    mu = _reference_mean(predictions, spec.reference_period)
    return replace(
        predictions,
        values=predictions.values - mu,
        notes=predictions.notes + ("centered_vs_fitted_mean_ERRONEOUS",),
    )


def make_holdout_blocks(calibration, length, stride=1, mode_filter=None) -> HoldoutScheme:
    """Constant-length contiguous blocks sweeping the calibration range.

    The first block is tagged 'front' (extrapolation), the last 'back', the
    rest 'interior' (interpolation).  mode_filter, if given, keeps only the
    named modes.
    """
    lo, hi = int(calibration[0]), int(calibration[1])
    span = hi - lo + 1
    length = int(length)
    stride = int(stride)
    if length < 1 or length > span:
        raise ConfigurationError(f"block length {length} invalid for range of {span} years")
    if stride < 1:
        raise ConfigurationError("stride must be >= 1")

    starts = list(range(lo, hi - length + 2, stride))
    blocks = []
    for k, s in enumerate(starts):
        if k == 0:
            mode = "front"
        elif k == len(starts) - 1:
            mode = "back"
        else:
            mode = "interior"
        blocks.append(HoldoutBlock(s, s + length - 1, mode))
    if mode_filter is not None:
        keep = set([mode_filter] if isinstance(mode_filter, str) else mode_filter)
        blocks = [b for b in blocks if b.mode in keep]
    return HoldoutScheme(tuple(blocks), (lo, hi))


def standardize(series: AnnualSeries, period) -> AnnualSeries:
    """Rescale to mean 0, sample sd 1 over the given period."""
    a, b = int(period[0]), int(period[1])
    v = series.window(a, b)
    if v.size < 2:
        raise DegenerateSeriesError("need >= 2 non-missing values in period")
    mu = float(v.mean())
    sd = float(v.std(ddof=1))
    if sd == 0.0 or not np.isfinite(sd):
        raise DegenerateSeriesError("zero variance over standardization period")
    return replace(series, values=(series.values - mu) / sd)
