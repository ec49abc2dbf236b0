"""Seeded synthetic monsoon datasets with planted structure.

``advection_dataset``
    Latent AR(1) field ``z[t] = phi * shift_east(z[t-1]) + sqrt(1 - phi^2) * noise``
    with spatially smoothed noise; rain is a clipped linear map of ``z``.
    A synthetic "NWP" product on the integer mesh over-forecasts and is
    displaced by one cell, so best-match selection has something to find.

``lag_dataset``
    A domain-wide signal with a lag-10 autoregression, so the best predictor
    of tomorrow needs the day nine days before today.

``white_noise_dataset``
    Independent days: no context length helps.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import GridIndex, unalign_nwp, write_grid
from .ingest import (DailyField, ForecastField, by_date, verifying_truth, write_forecasts,
                     write_rainfall)

SEASON_START = (6, 1)
SEASON_DAYS = 122


@dataclass
class SyntheticDataset:
    grid: GridIndex
    obs: list[DailyField]
    nwp_grid: GridIndex | None = None
    nwp: dict[int, list[ForecastField]] = field(default_factory=dict)

    def write(self, outdir: str | Path) -> dict[str, Path]:
        """Write grid/rainfall (and NWP) files; returns their paths by role."""
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        paths = {"grid": outdir / "grid.txt", "rainfall": outdir / "rainfall.csv"}
        write_grid(self.grid, paths["grid"])
        write_rainfall(self.obs, self.grid, paths["rainfall"])
        if self.nwp_grid is not None:
            paths["nwp_grid"] = outdir / "nwp_grid.txt"
            paths["forecast"] = outdir / "forecast.csv"
            write_grid(self.nwp_grid, paths["nwp_grid"])
            merged = sorted((f for fs in self.nwp.values() for f in fs),
                            key=lambda f: (f.issue_date, f.lead_days))
            write_forecasts(merged, self.nwp_grid, paths["forecast"])
        return paths


def season_dates(year: int) -> list[dt.date]:
    start = dt.date(year, *SEASON_START)
    return [start + dt.timedelta(days=k) for k in range(SEASON_DAYS)]


def _smooth_noise(rng, shape) -> np.ndarray:
    w = rng.standard_normal(shape)
    s = w + np.roll(w, 1, 0) + np.roll(w, -1, 0) + np.roll(w, 1, 1) + np.roll(w, -1, 1)
    return s / np.sqrt(5.0)


def _fields(dates, rain) -> list[DailyField]:
    ones = np.ones(rain.shape[1], dtype=bool)
    return [DailyField(d, r, ones) for d, r in zip(dates, rain)]


def advection_dataset(n_lat: int = 20, n_lon: int = 20, years=range(2008, 2023), phi: float = 0.8,
                      seed: int = 0, lat0: float = 12.5, lon0: float = 70.5,
                      nwp_years: tuple[int, int] | None = (2016, 2022), sparse_until: int = 2019,
                      coverage: float = 0.6, nwp_bias: float = 1.3, nwp_noise_mm: float = 10.0) -> SyntheticDataset:
    rng = np.random.default_rng(seed)
    grid = GridIndex.rectangle(lat0, lon0, n_lat, n_lon)
    scale = 20.0 * (0.6 + 0.8 * rng.random((n_lat, n_lon)))
    obs = []
    innov = np.sqrt(1.0 - phi * phi)
    for year in years:
        z = _smooth_noise(rng, (n_lat, n_lon))
        for _ in range(50):
            z = phi * np.roll(z, 1, axis=1) + innov * _smooth_noise(rng, (n_lat, n_lon))
        rain = []
        for _ in range(SEASON_DAYS):
            z = phi * np.roll(z, 1, axis=1) + innov * _smooth_noise(rng, (n_lat, n_lon))
            rain.append(np.round(scale * np.maximum(z, 0.0), 2).ravel())
        obs.extend(_fields(season_dates(year), np.array(rain)))
    ds = SyntheticDataset(grid, obs)
    if nwp_years is not None:
        ds.nwp_grid = GridIndex(tuple(unalign_nwp(c) for c in grid.cells))
        ds.nwp = _synthetic_nwp(ds, rng, n_lat, n_lon, nwp_years, sparse_until, coverage,
                                nwp_bias, nwp_noise_mm)
    return ds


def _synthetic_nwp(ds, rng, n_lat, n_lon, years, sparse_until, coverage, bias, noise):
    """Forecast at aligned cell (i, j) describes the truth at (i - 1, j), over-forecast."""
    obs_map = by_date(ds.obs)
    out = {1: [], 3: []}
    ones = np.ones(n_lat * n_lon, dtype=bool)
    for f in ds.obs:
        if not years[0] <= f.date.year <= years[1]:
            continue
        if f.date.year <= sparse_until and rng.random() >= coverage:
            continue
        for lead in (1, 3):
            truth = verifying_truth(obs_map, f.date, lead)
            if truth is None:
                continue
            t = truth[0].reshape(n_lat, n_lon)
            displaced = np.roll(t, 1, axis=0)
            value = np.maximum(bias * displaced + noise * rng.standard_normal(t.shape), 0.0)
            out[lead].append(ForecastField(f.date, lead, np.round(value, 2).ravel(), ones))
    return out


def lag_dataset(n_lat: int = 4, n_lon: int = 4, years=range(2008, 2023), lag: int = 10,
                coef: float = 0.9, cell_noise: float = 0.3, seed: int = 0,
                lat0: float = 20.5, lon0: float = 75.5) -> SyntheticDataset:
    rng = np.random.default_rng(seed)
    grid = GridIndex.rectangle(lat0, lon0, n_lat, n_lon)
    n = n_lat * n_lon
    obs = []
    innov = np.sqrt(1.0 - coef * coef)
    for year in years:
        s = list(rng.standard_normal(lag))
        for _ in range(SEASON_DAYS + 5 * lag):
            s.append(coef * s[-lag] + innov * rng.standard_normal())
        signal = np.array(s[-SEASON_DAYS:])
        z = signal[:, None] + cell_noise * rng.standard_normal((SEASON_DAYS, n))
        rain = np.round(20.0 * np.maximum(z + 0.3, 0.0), 2)
        obs.extend(_fields(season_dates(year), rain))
    return SyntheticDataset(grid, obs)


def white_noise_dataset(n_lat: int = 3, n_lon: int = 3, years=range(2008, 2018), seed: int = 0,
                        lat0: float = 20.5, lon0: float = 75.5) -> SyntheticDataset:
    rng = np.random.default_rng(seed)
    grid = GridIndex.rectangle(lat0, lon0, n_lat, n_lon)
    obs = []
    for year in years:
        rain = np.round(rng.gamma(0.8, 12.0, (SEASON_DAYS, n_lat * n_lon)), 2)
        obs.extend(_fields(season_dates(year), rain))
    return SyntheticDataset(grid, obs)
