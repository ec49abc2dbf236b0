"""Dependency-free figures: PGM rain maps and SVG forecast-vs-observed plots.

Both writers produce the same bytes for the same inputs, so outputs can be
compared against golden files.
"""

from __future__ import annotations

import datetime as dt
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .atomic import atomic_write_text
from .errors import ShapeError, UsageError
from .grid import GridIndex


def raster(values, present, grid: GridIndex, scale: tuple[float, float]) -> np.ndarray:
    """Grey levels on a 1 px/degree canvas, northernmost row first.

    Values are clipped to ``scale`` and mapped linearly to 0..255; pixels with
    no cell, or a cell that is not present, stay 0.
    """
    if grid.count == 0:
        raise UsageError("cannot draw an empty grid")
    lo, hi = float(scale[0]), float(scale[1])
    if not lo < hi:
        raise UsageError(f"heatmap scale needs min < max, got {scale}")
    values = np.asarray(values, dtype=float)
    present = np.ones(grid.count, bool) if present is None else np.asarray(present, dtype=bool)
    if values.shape != (grid.count,) or present.shape != (grid.count,):
        raise ShapeError(f"expected {grid.count} values, got {values.shape}")
    lats, lons = grid.lats(), grid.lons()
    top, left = lats.max(), lons.min()
    rows = int(round(top - lats.min())) + 1
    cols = int(round(lons.max() - left)) + 1
    img = np.zeros((rows, cols), dtype=int)
    frac = (np.clip(values, lo, hi) - lo) / (hi - lo)
    level = np.floor(frac * 255 + 0.5).astype(int)
    r = np.rint(top - lats).astype(int)
    c = np.rint(lons - left).astype(int)
    img[r[present], c[present]] = level[present]
    return img


def pgm_text(img: np.ndarray, comment: str = "") -> str:
    lines = ["P2"]
    if comment:
        lines.append("# " + comment.replace("\n", " "))
    lines.append(f"{img.shape[1]} {img.shape[0]}")
    lines.append("255")
    lines.extend(" ".join(str(v) for v in row) for row in img)
    return "\n".join(lines) + "\n"


def emit_heatmap(values, grid: GridIndex, scale: tuple[float, float], path,
                 present=None, comment: str = "") -> Path:
    """Write a plain (P2) PGM of one field."""
    img = raster(values, present, grid, scale)
    atomic_write_text(path, pgm_text(img, comment))
    return Path(path)


def read_pgm(path) -> np.ndarray:
    tokens = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            continue
        tokens.extend(line.split())
    if not tokens or tokens[0] != "P2":
        raise UsageError(f"{path}: not a plain PGM")
    w, h, _ = int(tokens[1]), int(tokens[2]), int(tokens[3])
    return np.array(tokens[4:], dtype=int).reshape(h, w)


# ---------------------------------------------------------------- SVG

WIDTH, HEIGHT = 720, 320
MARGIN = dict(left=56, right=16, top=28, bottom=40)
COLOURS = {"pred": "#d62728", "actual": "#1f77b4"}


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _path(xs, ys) -> str:
    pts = [f"{_fmt(x)},{_fmt(y)}" for x, y in zip(xs, ys)]
    return "M" + " L".join(pts)


def series_svg(pred: Sequence[float], actual: Sequence[float], dates: Sequence[dt.date],
               title: str = "", unit: str = "mm") -> str:
    pred = np.asarray(pred, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if len(pred) == 0:
        raise UsageError("nothing to plot: empty series")
    if len(pred) != len(actual) or len(pred) != len(dates):
        raise ShapeError("pred, actual and dates must have equal lengths")
    x0, x1 = MARGIN["left"], WIDTH - MARGIN["right"]
    y0, y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]
    ymax = max(float(np.max(pred)), float(np.max(actual)), 1.0)
    n = len(pred)
    xs = [(x0 + x1) / 2] if n == 1 else [x0 + (x1 - x0) * i / (n - 1) for i in range(n)]

    def ys(v):
        return [y0 - (y0 - y1) * float(a) / ymax for a in v]

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    if title:
        out.append(f'<text x="{x0}" y="16" font-size="13">{escape(title)}</text>')
    # axes with three y ticks and the first/last date
    out.append(f'<path class="axes" d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" stroke="black" fill="none"/>')
    for frac in (0.0, 0.5, 1.0):
        y = y0 - (y0 - y1) * frac
        out.append(f'<text x="{x0 - 6}" y="{_fmt(y + 4)}" text-anchor="end">{frac * ymax:.0f}</text>')
    out.append(f'<text x="{x0}" y="{y0 + 16}">{dates[0].isoformat()}</text>')
    if n > 1:
        out.append(f'<text x="{x1}" y="{y0 + 16}" text-anchor="end">{dates[-1].isoformat()}</text>')
    out.append(f'<text x="14" y="{(y0 + y1) // 2}" transform="rotate(-90 14 {(y0 + y1) // 2})" '
               f'text-anchor="middle">rain ({escape(unit)})</text>')
    for key, series in (("actual", actual), ("pred", pred)):
        out.append(f'<path class="{key}" d="{_path(xs, ys(series))}" stroke="{COLOURS[key]}" '
                   f'stroke-width="1.5" fill="none"/>')
    # legend
    lx = x1 - 150
    for k, (key, label) in enumerate((("pred", "prediction"), ("actual", "actual"))):
        y = y1 + 4 + 16 * k
        out.append(f'<path d="M{lx},{y} L{lx + 20},{y}" stroke="{COLOURS[key]}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{y + 4}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_series_plot(pred, actual, dates, path, title: str = "") -> Path:
    atomic_write_text(path, series_svg(pred, actual, dates, title))
    return Path(path)
