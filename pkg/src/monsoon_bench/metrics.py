"""Verification scores for rainfall forecasts.

Threshold tests are strict: a heavy-rain event is ``actual > H``, a warning
is ``pred > L``, an alarm is ``pred > H`` and it is false when
``actual < L``. Ratios with an empty denominator are undefined and come back
as ``None``; aggregates skip them and report how many were skipped.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields
from typing import Mapping, Sequence

import numpy as np

from .atomic import atomic_output
from .errors import ConfigError, EvaluationError, ShapeError
from .grid import GridIndex
from .ingest import DailyField, ForecastField, by_date, verifying_truth
from .neural.loss import peak_biased_loss

NA = "NA"


@dataclass(frozen=True)
class Thresholds:
    low_mm: float
    high_mm: float

    def __post_init__(self):
        if not 0 < self.low_mm < self.high_mm:
            raise ConfigError(f"need 0 < low < high, got {self.low_mm}, {self.high_mm}")


THRESHOLDS = {1: Thresholds(10.0, 30.0), 3: Thresholds(20.0, 60.0)}


def _series(pred, actual) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if pred.shape != actual.shape:
        raise ShapeError(f"pred shape {pred.shape} != actual shape {actual.shape}")
    return pred, actual


def pct(num: float, den: float) -> float | None:
    return None if den == 0 else 100.0 * num / den


def hrp_counts(pred, actual, th: Thresholds) -> tuple[int, int]:
    """(warned heavy-rain days, heavy-rain days)."""
    pred, actual = _series(pred, actual)
    events = actual > th.high_mm
    return int(np.count_nonzero(events & (pred > th.low_mm))), int(np.count_nonzero(events))


def far_counts(pred, actual, th: Thresholds) -> tuple[int, int]:
    """(false alarms, alarms)."""
    pred, actual = _series(pred, actual)
    alarms = pred > th.high_mm
    return int(np.count_nonzero(alarms & (actual < th.low_mm))), int(np.count_nonzero(alarms))


def hrp(pred, actual, th: Thresholds) -> float | None:
    """Heavy rainfall predictor: % of days with actual > H where pred > L."""
    return pct(*hrp_counts(pred, actual, th))


def far(pred, actual, th: Thresholds) -> float | None:
    """False alarm rate: % of days with pred > H where actual < L."""
    return pct(*far_counts(pred, actual, th))


def correlation(pred, actual) -> float | None:
    """Pearson correlation; ``None`` when either series is constant."""
    pred, actual = _series(pred, actual)
    if pred.ndim != 1 or len(pred) < 2:
        raise ShapeError("correlation needs two 1-d series of length >= 2")
    dp = pred - pred.mean()
    da = actual - actual.mean()
    sp = float(np.dot(dp, dp))
    sa = float(np.dot(da, da))
    if sp == 0.0 or sa == 0.0:
        return None
    r = float(np.dot(dp, da)) / math.sqrt(sp * sa)
    return max(-1.0, min(1.0, r))


def excess_error_pct(model_loss: float, reference_loss: float) -> float | None:
    """How much larger ``model_loss`` is than ``reference_loss``, in percent."""
    if not reference_loss > 0:
        return None
    return 100.0 * (model_loss - reference_loss) / reference_loss


@dataclass
class CellSkill:
    n_days: int = 0
    peak_biased_loss: float | None = None
    hrp_pct: float | None = None
    far_pct: float | None = None
    cc: float | None = None
    actual_events: int = 0
    captured: int = 0
    predicted_events: int = 0
    false_alarms: int = 0


def score_cell(pred, actual, th: Thresholds) -> CellSkill:
    pred, actual = _series(pred, actual)
    if len(pred) == 0:
        return CellSkill()
    captured, events = hrp_counts(pred, actual, th)
    false, alarms = far_counts(pred, actual, th)
    return CellSkill(
        n_days=len(pred),
        peak_biased_loss=peak_biased_loss(pred, actual),
        hrp_pct=pct(captured, events),
        far_pct=pct(false, alarms),
        cc=correlation(pred, actual) if len(pred) >= 2 else None,
        actual_events=events, captured=captured,
        predicted_events=alarms, false_alarms=false,
    )


SCORES = ("peak_biased_loss", "hrp_pct", "far_pct", "cc")
COUNTS = ("actual_events", "captured", "predicted_events", "false_alarms")


@dataclass
class SkillReport:
    model: str
    lead_days: int
    thresholds: Thresholds
    grid: GridIndex
    cells: list[CellSkill]
    reference_loss: float | None = None
    aggregate: dict = field(init=False)
    excluded: dict = field(init=False)

    def __post_init__(self):
        if len(self.cells) != len(self.grid):
            raise ShapeError("one CellSkill per grid cell required")
        self.aggregate, self.excluded = {}, {}
        for name in SCORES:
            vals = [getattr(c, name) for c in self.cells if getattr(c, name) is not None]
            self.aggregate[name] = float(np.mean(vals)) if vals else None
            self.excluded[name] = len(self.cells) - len(vals)
        for name in COUNTS:
            self.aggregate[name] = int(sum(getattr(c, name) for c in self.cells))

    @property
    def loss(self) -> float | None:
        return self.aggregate["peak_biased_loss"]

    @property
    def excess_error_pct(self) -> float | None:
        if self.reference_loss is None or self.loss is None:
            return None
        return excess_error_pct(self.loss, self.reference_loss)

    def city(self, name: str) -> CellSkill:
        return self.cells[self.grid.name_map[name]]

    def to_csv(self, path) -> None:
        names = {v: k for k, v in self.grid.name_map.items()}
        cols = [f.name for f in fields(CellSkill)]
        with atomic_output(path) as tmp, open(tmp, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cell", "lat", "lon", "name", *cols, "excess_error_pct"])
            w.writerow(["#", "model", self.model, "lead_days", self.lead_days,
                        "thresholds", f"{self.thresholds.low_mm:g}/{self.thresholds.high_mm:g}",
                        "reference_loss", _fmt(self.reference_loss)])
            for i, (c, skill) in enumerate(zip(self.grid.cells, self.cells)):
                row = [getattr(skill, k) for k in cols]
                w.writerow([i, f"{c.lat_deg:g}", f"{c.lon_deg:g}", names.get(i, ""),
                            *map(_fmt, row), ""])
            agg = [self.aggregate.get(k, None) if k != "n_days" else
                   int(sum(s.n_days for s in self.cells)) for k in cols]
            w.writerow(["aggregate", "", "", "", *map(_fmt, agg), _fmt(self.excess_error_pct)])
            w.writerow(["excluded", "", "", "", *[self.excluded.get(k, "") for k in cols], ""])


def _fmt(v) -> str:
    if v is None:
        return NA
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def _parse(v: str, kind):
    if v == NA:
        return None
    return kind(v)


def read_skill_csv(path, grid: GridIndex) -> SkillReport:
    """Inverse of :meth:`SkillReport.to_csv` (undefined values stay ``None``)."""
    types = {f.name: (int if f.name in COUNTS or f.name == "n_days" else float) for f in fields(CellSkill)}
    cols = [f.name for f in fields(CellSkill)]
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    meta = rows[1]
    model, lead = meta[2], int(meta[4])
    lo, hi = (float(x) for x in meta[6].split("/"))
    ref = _parse(meta[8], float)
    cells = []
    for row in rows[2:]:
        if row[0] in ("aggregate", "excluded"):
            continue
        vals = {k: _parse(v, types[k]) for k, v in zip(cols, row[4:4 + len(cols)])}
        cells.append(CellSkill(**vals))
    return SkillReport(model, lead, Thresholds(lo, hi), grid, cells, ref)


def joint_arrays(forecasts: Sequence[ForecastField], obs: Sequence[DailyField] | dict):
    """Stack forecasts with their verifying truth.

    Returns ``(issue_dates, pred, actual, mask)``; rows exist only for issue
    dates whose target days are all observed.
    """
    if not forecasts:
        raise EvaluationError("no forecasts to evaluate")
    leads = {f.lead_days for f in forecasts}
    if len(leads) != 1:
        raise EvaluationError(f"forecasts mix lead times {sorted(leads)}")
    lead = leads.pop()
    obs_map = obs if isinstance(obs, dict) else by_date(obs)
    dates, preds, truths, masks = [], [], [], []
    for f in forecasts:
        truth = verifying_truth(obs_map, f.issue_date, lead)
        if truth is None:
            continue
        values, present = truth
        if len(values) != len(f.values):
            raise ShapeError("forecast and observation grids differ in size")
        dates.append(f.issue_date)
        preds.append(f.values)
        truths.append(values)
        masks.append(present & f.present)
    if not dates:
        raise EvaluationError("forecasts and observations share no verifiable dates")
    return dates, np.stack(preds), np.stack(truths), np.stack(masks)


def evaluate(forecasts: Sequence[ForecastField], obs, grid: GridIndex,
             th: Thresholds | None = None, reference_loss: float | None = None,
             model: str = "") -> SkillReport:
    """Per-cell and grid-mean skill of ``forecasts`` against observations."""
    _, pred, actual, mask = joint_arrays(forecasts, obs)
    if pred.shape[1] != len(grid):
        raise ShapeError(f"forecasts have {pred.shape[1]} cells, grid has {len(grid)}")
    lead = forecasts[0].lead_days
    th = th or THRESHOLDS[lead]
    cells = [score_cell(pred[mask[:, j], j], actual[mask[:, j], j], th) for j in range(len(grid))]
    return SkillReport(model, lead, th, grid, cells, reference_loss)


def _num(v, digits=2) -> str:
    return NA if v is None else f"{v:.{digits}f}"


def summary_table(reports: Mapping[str, SkillReport], reference: str | None = None) -> str:
    """Grid-mean loss, excess error vs ``reference`` and FAR/HRP/CC per model."""
    ref = reports[reference].loss if reference else None
    lines = ["| Model | Peak-biased Loss | % Higher Error than " + (reference or "-") +
             " | FAR (%) | HRP (%) | CC |",
             "|---|---|---|---|---|---|"]
    for name, r in reports.items():
        exc = None if ref is None or name == reference else excess_error_pct(r.loss, ref)
        a = r.aggregate
        lines.append(f"| {name} | {_num(r.loss)} | {'-' if exc is None else _num(exc)} | "
                     f"{_num(a['far_pct'])} | {_num(a['hrp_pct'])} | {_num(a['cc'])} |")
    return "\n".join(lines) + "\n"


def _cities(reports: Mapping[str, SkillReport]) -> list[str]:
    first = next(iter(reports.values()))
    return sorted(first.grid.name_map)


def loss_table(reports: Mapping[str, SkillReport], reference: str) -> str:
    """Per-city mean loss per model, total row and excess-over-reference row."""
    models = list(reports)
    cities = _cities(reports)
    lines = ["| City | " + " | ".join(models) + " |", "|---" * (len(models) + 1) + "|"]
    totals = dict.fromkeys(models, 0.0)
    for city in cities:
        row = []
        for m in models:
            v = reports[m].city(city).peak_biased_loss
            totals[m] += v or 0.0
            row.append(_num(v))
        lines.append(f"| {city} | " + " | ".join(row) + " |")
    lines.append("| **Total Error** | " + " | ".join(_num(totals[m]) for m in models) + " |")
    exc = [excess_error_pct(totals[m], totals[reference]) for m in models]
    lines.append(f"| **% higher than {reference} error** | " +
                 " | ".join(_num(e) for e in exc) + " |")
    return "\n".join(lines) + "\n"


def hrp_table(reports: Mapping[str, SkillReport]) -> str:
    """Per-city heavy-rain events and warnings per model, with HRP % totals."""
    models = list(reports)
    cities = _cities(reports)
    first = reports[models[0]]
    th = first.thresholds
    head = [f"ACTL > {th.high_mm:g}"] + [f"{m} > {th.low_mm:g}" for m in models]
    lines = ["| Grid | " + " | ".join(head) + " |", "|---" * (len(head) + 1) + "|"]
    for city in cities:
        row = [first.city(city).actual_events] + [reports[m].city(city).captured for m in models]
        lines.append(f"| {city} | " + " | ".join(map(str, row)) + " |")
    ev = {m: sum(reports[m].city(c).actual_events for c in cities) for m in models}
    cap = {m: sum(reports[m].city(c).captured for c in cities) for m in models}
    lines.append("| **Total Events** | " + " | ".join(map(str, [ev[models[0]]] + [cap[m] for m in models])) + " |")
    lines.append("| **HRP %** | - | " + " | ".join(_num(pct(cap[m], ev[m])) for m in models) + " |")
    return "\n".join(lines) + "\n"


def far_table(reports: Mapping[str, SkillReport]) -> str:
    """Per-city alarms and false alarms per model, with FAR % totals."""
    models = list(reports)
    cities = _cities(reports)
    th = reports[models[0]].thresholds
    head = []
    for m in models:
        head += [f"{m} > {th.high_mm:g}", f"ACTL < {th.low_mm:g}"]
    lines = ["| Grid | " + " | ".join(head) + " |", "|---" * (len(head) + 1) + "|"]
    for city in cities:
        row = []
        for m in models:
            c = reports[m].city(city)
            row += [c.predicted_events, c.false_alarms]
        lines.append(f"| {city} | " + " | ".join(map(str, row)) + " |")
    tot, pc = [], []
    for m in models:
        alarms = sum(reports[m].city(c).predicted_events for c in cities)
        false = sum(reports[m].city(c).false_alarms for c in cities)
        tot += [alarms, false]
        pc += ["-", _num(pct(false, alarms))]
    lines.append("| **Total Events** | " + " | ".join(map(str, tot)) + " |")
    lines.append("| **% FAR** | " + " | ".join(pc) + " |")
    return "\n".join(lines) + "\n"
