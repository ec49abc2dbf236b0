"""Loading daily rainfall/forecast CSVs and building supervised windows.

File formats
------------
Rainfall CSV::

    date,lat,lon,value_mm
    2021-06-01,17.5,79.5,12.25

Forecast CSV::

    issue_date,lead_days,lat,lon,value_mm
    2021-06-01,1,17,80,9.0

One row per (date, cell); a missing row means the cell is not present that
day. 3-day forecast values are 3-day means, not sums.
"""

from __future__ import annotations

import csv
import datetime as dt
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .atomic import atomic_output
from .errors import ConfigError, DataError, EmptyWindowsWarning, SchemaError
from .grid import GridIndex, LatLon

RAIN_HEADER = ["date", "lat", "lon", "value_mm"]
FCST_HEADER = ["issue_date", "lead_days", "lat", "lon", "value_mm"]
LEADS = (1, 3)
JJAS = (6, 7, 8, 9)
DEFAULT_CAP_MM = 500.0
ONE_DAY = dt.timedelta(days=1)


def _frozen(a, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DailyField:
    date: dt.date
    values: np.ndarray
    present: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values, float)
        present = _frozen(self.present, bool)
        if values.shape != present.shape or values.ndim != 1:
            raise DataError("values and present must be equal-length vectors")
        if np.any(values[present] < 0) or not np.all(np.isfinite(values[present])):
            raise DataError(f"{self.date}: rainfall must be finite and nonnegative")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "present", present)

    @property
    def complete(self) -> bool:
        return bool(self.present.all())


@dataclass(frozen=True, eq=False)
class ForecastField:
    issue_date: dt.date
    lead_days: int
    values: np.ndarray
    present: np.ndarray

    def __post_init__(self):
        if self.lead_days not in LEADS:
            raise DataError(f"lead_days must be one of {LEADS}, got {self.lead_days}")
        values = _frozen(self.values, float)
        present = _frozen(self.present, bool)
        if values.shape != present.shape or values.ndim != 1:
            raise DataError("values and present must be equal-length vectors")
        if np.any(values[present] < 0) or not np.all(np.isfinite(values[present])):
            raise DataError(f"{self.issue_date}: forecast must be finite and nonnegative")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "present", present)


@dataclass(frozen=True)
class SplitSpec:
    train_years: tuple[int, int] = (1901, 2010)
    test_years: tuple[int, int] = (2012, 2022)
    months: tuple[int, ...] = JJAS

    def __post_init__(self):
        (a0, a1), (b0, b1) = self.train_years, self.test_years
        if a0 > a1 or b0 > b1:
            raise ConfigError("year ranges must be ascending")
        if a0 <= b1 and b0 <= a1:
            raise ConfigError(f"train {self.train_years} and test {self.test_years} overlap")
        if not self.months or any(not 1 <= m <= 12 for m in self.months):
            raise ConfigError(f"bad month set {self.months}")
        object.__setattr__(self, "months", tuple(sorted(set(self.months))))

    def role(self, year: int) -> str | None:
        if self.train_years[0] <= year <= self.train_years[1]:
            return "train"
        if self.test_years[0] <= year <= self.test_years[1]:
            return "test"
        return None


def _parse_date(text: str, where: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError:
        raise SchemaError(f"{where}: bad date {text!r}") from None


def _check_header(reader, expected, path):
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != expected:
        raise SchemaError(f"{path}: expected header {','.join(expected)}, got {header}")


def _cell(grid: GridIndex, lat: str, lon: str, where: str) -> int:
    try:
        coord = LatLon(float(lat), float(lon))
    except ValueError:
        raise SchemaError(f"{where}: bad coordinate ({lat}, {lon})") from None
    ordinal = grid.ordinal(coord)
    if ordinal is None:
        raise SchemaError(f"{where}: coordinate ({lat}, {lon}) not in grid")
    return ordinal


def _value(text: str, where: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise SchemaError(f"{where}: bad value {text!r}") from None
    if not np.isfinite(v) or v < 0:
        raise DataError(f"{where}: rainfall must be finite and nonnegative, got {v}")
    return v


def load_rainfall(path: str | Path, grid: GridIndex) -> list[DailyField]:
    """Read a rainfall CSV into one :class:`DailyField` per date, sorted."""
    per_date: dict[dt.date, dict[int, float]] = defaultdict(dict)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        _check_header(reader, RAIN_HEADER, path)
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            where = f"{path}:{lineno}"
            if len(row) != 4:
                raise SchemaError(f"{where}: expected 4 columns")
            date = _parse_date(row[0], where)
            cell = _cell(grid, row[1], row[2], where)
            if cell in per_date[date]:
                raise DataError(f"{where}: duplicate row for {date} cell {grid.cells[cell]}")
            per_date[date][cell] = _value(row[3], where)
    out = []
    for date in sorted(per_date):
        values = np.zeros(len(grid))
        present = np.zeros(len(grid), dtype=bool)
        for cell, v in per_date[date].items():
            values[cell] = v
            present[cell] = True
        out.append(DailyField(date, values, present))
    return out


def write_rainfall(fields: Iterable[DailyField], grid: GridIndex, path: str | Path) -> None:
    with atomic_output(path) as tmp, open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RAIN_HEADER)
        for f in fields:
            iso = f.date.isoformat()
            for i in np.flatnonzero(f.present):
                c = grid.cells[i]
                w.writerow([iso, f"{c.lat_deg:g}", f"{c.lon_deg:g}", repr(float(f.values[i]))])


def load_forecasts(path: str | Path, grid: GridIndex, lead_days: int | None = None) -> list[ForecastField]:
    """Read a forecast CSV, optionally keeping a single lead. Sorted by (issue date, lead)."""
    per_key: dict[tuple[dt.date, int], dict[int, float]] = defaultdict(dict)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        _check_header(reader, FCST_HEADER, path)
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            where = f"{path}:{lineno}"
            if len(row) != 5:
                raise SchemaError(f"{where}: expected 5 columns")
            date = _parse_date(row[0], where)
            try:
                lead = int(row[1])
            except ValueError:
                raise SchemaError(f"{where}: bad lead {row[1]!r}") from None
            if lead not in LEADS:
                raise SchemaError(f"{where}: lead_days must be 1 or 3")
            if lead_days is not None and lead != lead_days:
                continue
            cell = _cell(grid, row[2], row[3], where)
            if cell in per_key[(date, lead)]:
                raise DataError(f"{where}: duplicate row")
            per_key[(date, lead)][cell] = _value(row[4], where)
    out = []
    for (date, lead) in sorted(per_key):
        values = np.zeros(len(grid))
        present = np.zeros(len(grid), dtype=bool)
        for cell, v in per_key[(date, lead)].items():
            values[cell] = v
            present[cell] = True
        out.append(ForecastField(date, lead, values, present))
    return out


def write_forecasts(fields: Iterable[ForecastField], grid: GridIndex, path: str | Path) -> None:
    with atomic_output(path) as tmp, open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FCST_HEADER)
        for f in fields:
            iso = f.issue_date.isoformat()
            for i in np.flatnonzero(f.present):
                c = grid.cells[i]
                w.writerow([iso, f.lead_days, f"{c.lat_deg:g}", f"{c.lon_deg:g}",
                            repr(float(f.values[i]))])


def stack(fields: Sequence[DailyField | ForecastField]) -> tuple[list[dt.date], np.ndarray, np.ndarray]:
    """(dates, values[days, cells], present[days, cells])."""
    dates = [getattr(f, "date", None) or f.issue_date for f in fields]
    if not fields:
        return dates, np.zeros((0, 0)), np.zeros((0, 0), dtype=bool)
    return dates, np.stack([f.values for f in fields]), np.stack([f.present for f in fields])


def by_date(fields: Iterable[DailyField]) -> dict[dt.date, DailyField]:
    return {f.date: f for f in fields}


def filter_joint_days(obs: Sequence[DailyField], fcst: Sequence[ForecastField]) -> list[tuple[dt.date, DailyField, ForecastField]]:
    """Pairs where a forecast was issued on a date that also has an observation."""
    obs_map = by_date(obs)
    return [(f.issue_date, obs_map[f.issue_date], f) for f in fcst if f.issue_date in obs_map]


def verifying_truth(obs_map: dict[dt.date, DailyField], issue_date: dt.date, lead_days: int):
    """Observed quantity a forecast issued on ``issue_date`` is scored against.

    Lead 1 is the next day's rainfall; lead 3 is the mean over the next three
    days. Returns ``(values, present)`` or ``None`` when a target day is absent.
    """
    if lead_days not in LEADS:
        raise DataError(f"lead_days must be one of {LEADS}")
    days = [obs_map.get(issue_date + k * ONE_DAY) for k in range(1, lead_days + 1)]
    if any(d is None for d in days):
        return None
    values = np.mean([d.values for d in days], axis=0)
    present = np.logical_and.reduce([d.present for d in days])
    return values, present


@dataclass(frozen=True)
class WindowSample:
    context: np.ndarray   # (cells, d), oldest day first
    target1: np.ndarray   # (cells,)
    target3: np.ndarray   # (cells,) mean of next three days
    issue_date: dt.date   # last context day


@dataclass(frozen=True, eq=False)
class WindowSet:
    """A batch of :class:`WindowSample` stored as arrays."""

    context: np.ndarray
    target1: np.ndarray
    target3: np.ndarray
    issue_dates: tuple[dt.date, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.issue_dates)

    def __getitem__(self, i: int) -> WindowSample:
        return WindowSample(self.context[i], self.target1[i], self.target3[i], self.issue_dates[i])

    @property
    def context_days(self) -> int:
        return self.context.shape[2]

    def target(self, lead_days: int) -> np.ndarray:
        return {1: self.target1, 3: self.target3}[lead_days]

    @classmethod
    def empty(cls, n_cells: int, d: int) -> "WindowSet":
        return cls(np.zeros((0, n_cells, d)), np.zeros((0, n_cells)), np.zeros((0, n_cells)), ())

    @classmethod
    def concat(cls, sets: Sequence["WindowSet"]) -> "WindowSet":
        sets = list(sets)
        return cls(np.concatenate([s.context for s in sets]),
                   np.concatenate([s.target1 for s in sets]),
                   np.concatenate([s.target3 for s in sets]),
                   tuple(d for s in sets for d in s.issue_dates))

    def select(self, mask) -> "WindowSet":
        idx = np.flatnonzero(mask)
        return WindowSet(self.context[idx], self.target1[idx], self.target3[idx],
                         tuple(self.issue_dates[i] for i in idx))


def seasons(fields: Sequence[DailyField], months: Iterable[int] = JJAS) -> list[list[DailyField]]:
    """Split chronological fields into runs of consecutive in-season days of one year."""
    months = set(months)
    runs: list[list[DailyField]] = []
    prev = None
    for f in fields:
        if f.date.month not in months:
            prev = None
            continue
        if prev is not None and (f.date - prev.date != ONE_DAY or f.date.year != prev.date.year):
            prev = None
        if prev is None:
            runs.append([])
        runs[-1].append(f)
        prev = f
    return runs


def make_windows(fields: Sequence[DailyField], d: int, split: SplitSpec) -> tuple[WindowSet, WindowSet]:
    """Build (train, test) context windows of ``d`` days with 1- and 3-day targets.

    A sample needs ``d`` complete context days and three complete target days
    inside one season run. It goes to train or test by the year of its first
    target day; years in neither range are dropped.
    """
    if d < 1:
        raise ConfigError(f"context length must be >= 1, got {d}")
    n_cells = len(fields[0].values) if fields else 0
    parts: dict[str, list] = {"train": [], "test": []}
    for run in seasons(fields, split.months):
        if len(run) < d + 3:
            continue
        values = np.stack([f.values for f in run])
        complete = np.array([f.complete for f in run])
        for t in range(d - 1, len(run) - 3):
            if not complete[t - d + 1:t + 4].all():
                continue
            role = split.role(run[t + 1].date.year)
            if role is None:
                continue
            parts[role].append((values[t - d + 1:t + 1].T, values[t + 1],
                                values[t + 1:t + 4].mean(axis=0), run[t].date))
    out = []
    for role in ("train", "test"):
        items = parts[role]
        if items:
            ctx, t1, t3, dates = zip(*items)
            out.append(WindowSet(np.stack(ctx), np.stack(t1), np.stack(t3), tuple(dates)))
        else:
            out.append(WindowSet.empty(n_cells, d))
    if not len(out[0]) and not len(out[1]):
        warnings.warn(f"no windows with context {d}: every season run is shorter than {d + 3} "
                      "complete days or lies outside the split", EmptyWindowsWarning, stacklevel=2)
    return out[0], out[1]


def normalize(values, cap: float = DEFAULT_CAP_MM) -> np.ndarray:
    """Map mm onto [0, 1] by ``min(v, cap) / cap``."""
    if not cap > 0:
        raise ConfigError(f"normalization cap must be positive, got {cap}")
    return np.minimum(np.asarray(values, dtype=float), cap) / cap


def denormalize(values, cap: float = DEFAULT_CAP_MM) -> np.ndarray:
    if not cap > 0:
        raise ConfigError(f"normalization cap must be positive, got {cap}")
    return np.asarray(values, dtype=float) * cap
