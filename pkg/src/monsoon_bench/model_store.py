"""Saving and loading trained pipelines as checkpoint files.

DL-HD and fusion ensembles are stored one member per checkpoint
(``dlhd_member_00.json``, ``fusion_member_00.json``, ...); the ``meta`` block
of each member carries what is needed to rebuild the model. The best-match
table of the NWP pipeline is a small CSV.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .atomic import atomic_output
from .errors import DataError
from .forecasters import DLHDModel, FusionModel
from .grid import GridIndex, LatLon, MatchTable, align_nwp, all_candidates, unalign_nwp
from .neural.checkpoint import load_checkpoint, save_checkpoint

MATCH_HEADER = ["lat", "lon", "nwp_lat", "nwp_lon", "error"]


def _members(model_dir, prefix):
    paths = sorted(Path(model_dir).glob(f"{prefix}_member_*.json"))
    if not paths:
        raise DataError(f"no {prefix} checkpoints in {model_dir}")
    return [load_checkpoint(p) for p in paths]


def save_dlhd(model: DLHDModel, outdir, meta: dict | None = None) -> list[Path]:
    paths = []
    for k, (params, hist) in enumerate(zip(model.members, model.histories)):
        m = dict(meta or {}, pipeline="dl_hd", member=k, cap_mm=model.cap_mm,
                 context_days=model.context_days)
        path = Path(outdir) / f"dlhd_member_{k:02d}.json"
        save_checkpoint(path, params, hist, m)
        paths.append(path)
    return paths


def load_dlhd(model_dir) -> DLHDModel:
    loaded = _members(model_dir, "dlhd")
    meta = loaded[0][2]
    return DLHDModel([p for p, _, _ in loaded], [h for _, h, _ in loaded], float(meta["cap_mm"]),
                     int(meta["context_days"]))


def save_fusion(model: FusionModel, outdir, meta: dict | None = None) -> list[Path]:
    paths = []
    for k, (params, hist) in enumerate(zip(model.members, model.histories)):
        m = dict(meta or {}, member=k, cap_mm=model.cap_mm, shared=model.shared,
                 with_dlhd=model.with_dlhd, candidates=[list(c) for c in model.candidates],
                 input_mean=model.input_mean.tolist(), input_std=model.input_std.tolist())
        path = Path(outdir) / f"fusion_member_{k:02d}.json"
        save_checkpoint(path, params, hist, m)
        paths.append(path)
    return paths


def load_fusion(model_dir) -> FusionModel:
    loaded = _members(model_dir, "fusion")
    meta = loaded[0][2]
    return FusionModel([p for p, _, _ in loaded], [h for _, h, _ in loaded], float(meta["cap_mm"]),
                       bool(meta["shared"]), tuple(tuple(c) for c in meta["candidates"]),
                       bool(meta["with_dlhd"]), np.array(meta["input_mean"]),
                       np.array(meta["input_std"]))


def write_match(match: MatchTable, grid: GridIndex, source_grid: GridIndex, path) -> None:
    """One row per target cell; the source is given in raw NWP coordinates."""
    with atomic_output(path) as tmp, open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MATCH_HEADER)
        for cell, src, err in zip(grid.cells, match.source, match.error):
            raw = unalign_nwp(source_grid.cells[src])
            w.writerow([f"{cell.lat_deg:g}", f"{cell.lon_deg:g}", f"{raw.lat_deg:g}",
                        f"{raw.lon_deg:g}", repr(float(err))])


def read_match(path, grid: GridIndex, source_grid: GridIndex) -> MatchTable:
    source = np.full(len(grid), -1)
    error = np.zeros(len(grid))
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != MATCH_HEADER:
            raise DataError(f"{path}: expected header {','.join(MATCH_HEADER)}")
        for lineno, row in enumerate(reader, 2):
            try:
                cell = grid.ordinal(LatLon(float(row[0]), float(row[1])))
                src = source_grid.ordinal(align_nwp(LatLon(float(row[2]), float(row[3]))))
                err = float(row[4])
            except (ValueError, IndexError):
                raise DataError(f"{path}:{lineno}: malformed row") from None
            if cell is None or src is None:
                raise DataError(f"{path}:{lineno}: cell not on the grid")
            source[cell] = src
            error[cell] = err
    if np.any(source < 0):
        raise DataError(f"{path}: match table does not cover every cell")
    return MatchTable(source, error, all_candidates(grid, source_grid))
