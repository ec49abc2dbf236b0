"""Grid geometry for the two 1-degree meshes.

The observation mesh (IMD convention) puts cell centres on half-degree
coordinates, e.g. (17.5, 79.5). The forecast mesh (NWP convention) uses
integer coordinates. :func:`align_nwp` maps the second onto the first by a
half-degree shift north-west, after which every observation cell is matched
to one of five candidate forecast cells (centre plus the four axis-aligned
neighbours).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .atomic import atomic_output
from .errors import ConventionError, DataError, EmptyCandidateError, SchemaError, ShapeError

SHIFT_DEG = 0.5
# candidate order: centre, N, S, E, W as (dlat, dlon) in degrees
CANDIDATE_OFFSETS = ((0, 0), (1, 0), (-1, 0), (0, 1), (0, -1))


def _is_integer(v: float) -> bool:
    return float(v).is_integer()


def _is_half(v: float) -> bool:
    twice = 2.0 * float(v)
    return twice.is_integer() and int(twice) % 2 == 1


@dataclass(frozen=True, slots=True)
class LatLon:
    lat_deg: float
    lon_deg: float

    def __post_init__(self):
        if not -90.0 <= self.lat_deg <= 90.0:
            raise DataError(f"latitude {self.lat_deg} outside [-90, 90]")
        if not -180.0 <= self.lon_deg <= 180.0:
            raise DataError(f"longitude {self.lon_deg} outside [-180, 180]")

    @property
    def is_imd(self) -> bool:
        return _is_half(self.lat_deg) and _is_half(self.lon_deg)

    @property
    def is_nwp(self) -> bool:
        return _is_integer(self.lat_deg) and _is_integer(self.lon_deg)

    def key(self) -> tuple[int, int]:
        """Exact integer key in half-degree units."""
        return (round(2 * self.lat_deg), round(2 * self.lon_deg))

    def offset(self, dlat: float, dlon: float) -> "LatLon":
        return LatLon(self.lat_deg + dlat, self.lon_deg + dlon)


def align_nwp(coord: LatLon) -> LatLon:
    """Shift an integer (NWP) coordinate 0.5 deg north and 0.5 deg west."""
    if not coord.is_nwp:
        raise ConventionError(f"{coord} is not on the integer NWP mesh")
    return LatLon(coord.lat_deg + SHIFT_DEG, coord.lon_deg - SHIFT_DEG)


def unalign_nwp(coord: LatLon) -> LatLon:
    """Inverse of :func:`align_nwp`."""
    if not coord.is_imd:
        raise ConventionError(f"{coord} is not on the half-degree IMD mesh")
    return LatLon(coord.lat_deg - SHIFT_DEG, coord.lon_deg + SHIFT_DEG)


@dataclass(frozen=True)
class GridIndex:
    """Ordered list of cells; the position of a cell is its ordinal."""

    cells: tuple[LatLon, ...]
    name_map: Mapping[str, int] = field(default_factory=dict)
    _lookup: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        cells = tuple(self.cells)
        object.__setattr__(self, "cells", cells)
        lookup = {}
        for i, c in enumerate(cells):
            k = c.key()
            if k in lookup:
                raise DataError(f"duplicate grid cell {c}")
            lookup[k] = i
        object.__setattr__(self, "_lookup", lookup)
        for name, ordinal in self.name_map.items():
            if not 0 <= ordinal < len(cells):
                raise DataError(f"name {name!r} points at missing ordinal {ordinal}")
        object.__setattr__(self, "name_map", dict(self.name_map))

    @property
    def count(self) -> int:
        return len(self.cells)

    def __len__(self) -> int:
        return len(self.cells)

    def ordinal(self, coord: LatLon) -> int | None:
        return self._lookup.get(coord.key())

    def __contains__(self, coord: LatLon) -> bool:
        return coord.key() in self._lookup

    def lats(self) -> np.ndarray:
        return np.array([c.lat_deg for c in self.cells])

    def lons(self) -> np.ndarray:
        return np.array([c.lon_deg for c in self.cells])

    def with_names(self, named: Mapping[str, LatLon]) -> tuple["GridIndex", list[str]]:
        """Attach labels for the named cells present in this grid.

        Returns the labelled grid and the names that were not found.
        """
        found, missing = {}, []
        for name, coord in named.items():
            ordinal = self.ordinal(coord)
            if ordinal is None:
                missing.append(name)
            else:
                found[name] = ordinal
        return GridIndex(self.cells, found), missing

    @classmethod
    def rectangle(cls, lat0: float, lon0: float, n_lat: int, n_lon: int) -> "GridIndex":
        """Regular 1-degree mesh, south-west corner first, row-major by latitude."""
        return cls(tuple(LatLon(lat0 + i, lon0 + j) for i in range(n_lat) for j in range(n_lon)))


def align_grid(nwp_grid: GridIndex) -> GridIndex:
    """Aligned copy of an integer mesh; ordinals are preserved."""
    return GridIndex(tuple(align_nwp(c) for c in nwp_grid.cells))


def load_grid(path: str | Path) -> GridIndex:
    """Read a ``lat,lon`` per line cell list. Blank lines and ``#`` comments are skipped."""
    cells = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise SchemaError(f"{path}:{lineno}: expected 'lat,lon', got {line!r}")
            try:
                lat, lon = float(parts[0]), float(parts[1])
            except ValueError:
                if not cells:
                    continue  # header row
                raise SchemaError(f"{path}:{lineno}: not a number: {line!r}") from None
            cells.append(LatLon(lat, lon))
    return GridIndex(tuple(cells))


def write_grid(grid: GridIndex, path: str | Path) -> None:
    with atomic_output(path) as tmp, open(tmp, "w") as fh:
        for c in grid.cells:
            fh.write(f"{c.lat_deg:g},{c.lon_deg:g}\n")


def load_cities(path: str | Path | None = None) -> dict[str, LatLon]:
    """``name,lat,lon`` rows; the bundled list of 20 cities when ``path`` is None."""
    if path is None:
        text = resources.files("monsoon_bench").joinpath("data/cities.csv").read_text()
        where = "bundled cities.csv"
    else:
        text = Path(path).read_text()
        where = str(path)
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [c.strip() for c in rows[0]] != ["name", "lat", "lon"]:
        raise SchemaError(f"{where}: expected header name,lat,lon")
    out = {}
    for lineno, row in enumerate(rows[1:], 2):
        if not row:
            continue
        if len(row) != 3:
            raise SchemaError(f"{where}:{lineno}: expected 3 columns")
        try:
            out[row[0].strip()] = LatLon(float(row[1]), float(row[2]))
        except ValueError:
            raise SchemaError(f"{where}:{lineno}: bad coordinates") from None
    return out


def candidate_cells(target: LatLon, source_grid: GridIndex) -> list[int]:
    """Ordinals of the aligned source cells around ``target`` (centre, N, S, E, W)."""
    if not target.is_imd:
        raise ConventionError(f"{target} is not on the half-degree IMD mesh")
    out = []
    for dlat, dlon in CANDIDATE_OFFSETS:
        lat, lon = target.lat_deg + dlat, target.lon_deg + dlon
        if not (-90 <= lat <= 90 and -180 <= lon <= 180):
            continue
        ordinal = source_grid.ordinal(LatLon(lat, lon))
        if ordinal is not None:
            out.append(ordinal)
    if not out:
        raise EmptyCandidateError(f"no source cell near {target}")
    return out


ErrorFn = Callable[[np.ndarray, np.ndarray], float]


def best_match(target_series, candidate_series: Sequence, loss: ErrorFn | None = None) -> tuple[int, float]:
    """Index of the candidate series closest to ``target_series``.

    ``loss(pred, actual)`` defaults to the peak-biased loss. Ties go to the
    lowest index.
    """
    if loss is None:
        from .neural.loss import peak_biased_loss as loss
    target = np.asarray(target_series, dtype=float)
    if len(candidate_series) == 0:
        raise EmptyCandidateError("best_match needs at least one candidate")
    best_i, best_err = -1, np.inf
    for i, cand in enumerate(candidate_series):
        cand = np.asarray(cand, dtype=float)
        if cand.shape != target.shape:
            raise ShapeError(f"candidate {i} has shape {cand.shape}, target {target.shape}")
        err = float(loss(cand, target))
        if err < best_err:
            best_i, best_err = i, err
    return best_i, best_err


@dataclass(frozen=True)
class MatchTable:
    """Chosen source ordinal and selecting error for every target cell."""

    source: np.ndarray  # int, one per target cell
    error: np.ndarray
    candidates: tuple[tuple[int, ...], ...]

    def __len__(self) -> int:
        return len(self.source)


def all_candidates(grid: GridIndex, source_grid: GridIndex) -> tuple[tuple[int, ...], ...]:
    return tuple(tuple(candidate_cells(c, source_grid)) for c in grid.cells)


def build_match_table(truth: np.ndarray, truth_present: np.ndarray,
                      fcst: np.ndarray, fcst_present: np.ndarray,
                      grid: GridIndex, source_grid: GridIndex,
                      loss: ErrorFn | None = None) -> MatchTable:
    """Pick the best candidate per target cell over a calibration period.

    ``truth`` is (days, len(grid)); ``fcst`` is (days, len(source_grid)) on
    the same day axis. Only days where the target and all of its candidates
    are present enter the error.
    """
    truth = np.asarray(truth, dtype=float)
    fcst = np.asarray(fcst, dtype=float)
    if truth.shape[0] != fcst.shape[0]:
        raise ShapeError("truth and forecast must share the day axis")
    cands = all_candidates(grid, source_grid)
    source = np.empty(len(grid), dtype=int)
    error = np.empty(len(grid))
    for cell, cand in enumerate(cands):
        idx = list(cand)
        ok = truth_present[:, cell] & fcst_present[:, idx].all(axis=1)
        if not ok.any():
            raise DataError(f"cell {grid.cells[cell]} has no calibration days")
        i, err = best_match(truth[ok, cell], [fcst[ok, j] for j in idx], loss)
        source[cell] = idx[i]
        error[cell] = err
    return MatchTable(source, error, cands)
