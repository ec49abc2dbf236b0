"""Forecast pipelines: DL-HD, best-match NWP, NWP+ and NWP+DL-HD fusion, lag sweep."""

from __future__ import annotations

import datetime as dt
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import AlignmentError, ConfigError, EmptyWindowsWarning
from .grid import GridIndex, MatchTable, all_candidates, build_match_table
from .ingest import (DEFAULT_CAP_MM, LEADS, DailyField, ForecastField, SplitSpec, WindowSet,
                     by_date, filter_joint_days, make_windows, normalize, verifying_truth)
from .neural import LayerSpec, ModelParams, TrainConfig, ensemble_average, fit_ensemble, predict
from .neural.loss import peak_biased_loss
from .neural.training import History, windows_to_xy

KINDS = ("dl_hd", "nwp", "nwp_plus", "nwp_dlhd", "persistence")
PRESETS = ("desk", "paper")
N_CANDIDATES = 5


@dataclass(frozen=True)
class PipelineSpec:
    kind: str = "dl_hd"
    context_days: int = 12
    lead_days: int = 1
    split: SplitSpec = field(default_factory=SplitSpec)
    preset: str = "desk"
    ensemble_runs: int = 10
    seed: int = 0
    cap_mm: float = DEFAULT_CAP_MM

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"pipeline must be one of {KINDS}, got {self.kind!r}")
        if not 3 <= self.context_days <= 20:
            raise ConfigError(f"context_days must be in [3, 20], got {self.context_days}")
        if self.lead_days not in LEADS:
            raise ConfigError(f"lead_days must be one of {LEADS}")
        if self.preset not in PRESETS:
            raise ConfigError(f"preset must be one of {PRESETS}")
        if self.ensemble_runs < 1:
            raise ConfigError("ensemble_runs must be >= 1")

    @property
    def seeds(self) -> list[int]:
        return [self.seed + k for k in range(self.ensemble_runs)]


def dlhd_layers(n_cells: int, preset: str = "desk", hidden: int | None = None) -> list[LayerSpec]:
    """LSTM over the context days, dense head emitting both leads for every cell."""
    out = 2 * n_cells
    if preset == "paper":
        return [LayerSpec("lstm", n_cells, 400, "tanh"),
                LayerSpec("dense", 400, 100, "identity"),
                LayerSpec("dense", 100, 50, "identity"),
                LayerSpec("dense", 50, out, "sigmoid")]
    h = hidden or 32
    return [LayerSpec("lstm", n_cells, h, "tanh"),
            LayerSpec("dense", h, h, "identity"),
            LayerSpec("dense", h, out, "sigmoid")]


def fusion_layers(n_inputs: int, groups: int = 1) -> list[LayerSpec]:
    return [LayerSpec("dense", n_inputs, 32, "relu", groups),
            LayerSpec("dense", 32, 16, "relu", groups),
            LayerSpec("dense", 16, 1, "sigmoid", groups)]


def dlhd_config(preset: str = "desk", cap_mm: float = DEFAULT_CAP_MM, **overrides) -> TrainConfig:
    base = dict(batch_size=64, max_epochs=300, early_stop_patience=20, output_scale=cap_mm)
    if preset == "desk":
        base.update(max_epochs=150, early_stop_patience=15)
    base.update(overrides)
    return TrainConfig(**base)


def fusion_config(preset: str = "desk", cap_mm: float = DEFAULT_CAP_MM, **overrides) -> TrainConfig:
    base = dict(batch_size=24, max_epochs=100, early_stop_patience=10, output_scale=cap_mm)
    base.update(overrides)
    return TrainConfig(**base)


def _fields_from(dates, values: np.ndarray, lead: int, present=None) -> list[ForecastField]:
    values = np.maximum(values, 0.0)
    out = []
    for i, d in enumerate(dates):
        p = np.ones(values.shape[1], dtype=bool) if present is None else present[i]
        out.append(ForecastField(d, lead, values[i], p))
    return out


@dataclass
class DLHDModel:
    """A trained DL-HD ensemble."""

    members: list[ModelParams]
    histories: list[History]
    cap_mm: float
    context_days: int

    def member_predictions(self, windows: WindowSet) -> list[np.ndarray]:
        x, _ = windows_to_xy(windows, self.cap_mm)
        return [predict(p, x, self.cap_mm) for p in self.members]

    def forecast(self, windows: WindowSet, lead_days: int) -> list[ForecastField]:
        if len(windows) == 0:
            return []
        n = windows.target1.shape[1]
        mean = ensemble_average(self.member_predictions(windows))
        head = mean[:, :n] if lead_days == 1 else mean[:, n:]
        return _fields_from(windows.issue_dates, head, lead_days)


def train_dl_hd(train_windows: WindowSet, n_cells: int, preset: str = "desk",
                seeds: Sequence[int] = tuple(range(10)), config: TrainConfig | None = None,
                layers: Sequence[LayerSpec] | None = None, workers: int | None = None) -> DLHDModel:
    if len(train_windows) == 0:
        raise ConfigError("no training windows for DL-HD")
    config = config or dlhd_config(preset)
    layers = layers or dlhd_layers(n_cells, preset)
    x, y = windows_to_xy(train_windows, config.output_scale)
    runs = fit_ensemble(x, y, layers, config, list(seeds), workers)
    return DLHDModel([p for p, _ in runs], [h for _, h in runs], config.output_scale,
                     train_windows.context_days)


def run_dl_hd(fields: Sequence[DailyField], spec: PipelineSpec, config: TrainConfig | None = None,
              layers=None, workers: int | None = None) -> tuple[list[ForecastField], DLHDModel | None]:
    """Train ``spec.ensemble_runs`` seeded models and forecast every test window.

    Returns ``([], None)`` with an :class:`EmptyWindowsWarning` when no windows exist.
    """
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", EmptyWindowsWarning)
        train, test = make_windows(fields, spec.context_days, spec.split)
    for w in caught:
        warnings.warn(w.message, w.category, stacklevel=2)
    if len(train) == 0 or len(test) == 0:
        warnings.warn(f"DL-HD at d={spec.context_days}: {len(train)} train / {len(test)} test windows",
                      EmptyWindowsWarning, stacklevel=2)
        return [], None
    n_cells = train.target1.shape[1]
    config = config or dlhd_config(spec.preset, spec.cap_mm)
    model = train_dl_hd(train, n_cells, spec.preset, spec.seeds, config, layers, workers)
    return model.forecast(test, spec.lead_days), model


def calibrate_match(obs: Sequence[DailyField], fcst: Sequence[ForecastField], grid: GridIndex,
                    source_grid: GridIndex, years: tuple[int, int] | None = None) -> MatchTable:
    """Best-match table over issue dates (optionally limited to target years) with truth."""
    obs_map = by_date(obs)
    truth, tpres, fv, fp = [], [], [], []
    for date, _, f in filter_joint_days(obs, fcst):
        tr = verifying_truth(obs_map, date, f.lead_days)
        if tr is None:
            continue
        if years and not years[0] <= (date + dt.timedelta(days=1)).year <= years[1]:
            continue
        truth.append(tr[0])
        tpres.append(tr[1])
        fv.append(f.values)
        fp.append(f.present)
    if not truth:
        raise ConfigError("no calibration dates shared by forecasts and observations")
    return build_match_table(np.array(truth), np.array(tpres), np.array(fv), np.array(fp),
                             grid, source_grid)


def run_nwp(obs: Sequence[DailyField], fcst: Sequence[ForecastField], grid: GridIndex,
            match: MatchTable) -> list[ForecastField]:
    """Copy each target cell's matched source-cell forecast, on dates with observations."""
    if len(match) != len(grid):
        raise ConfigError("match table does not cover the grid")
    out = []
    for date, _, f in filter_joint_days(obs, fcst):
        out.append(ForecastField(date, f.lead_days, f.values[match.source], f.present[match.source]))
    return out


@dataclass
class FusionModel:
    members: list[ModelParams]
    histories: list[History]
    cap_mm: float
    shared: bool
    candidates: tuple[tuple[int, ...], ...]
    with_dlhd: bool
    input_mean: np.ndarray
    input_std: np.ndarray

    def standardize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.input_mean) / self.input_std


def feature_scaling(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature mean and std over dates and cells; constant columns get std 1."""
    flat = x.reshape(-1, x.shape[-1])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    std[std == 0] = 1.0
    return mean, std


def fusion_features(fcst_values: np.ndarray, fcst_present: np.ndarray,
                    candidates, cap: float, extra: np.ndarray | None = None) -> np.ndarray:
    """Per-cell inputs ``(dates, cells, 2*5 [+1])``.

    Five candidate values on the unit scale, zero-filled where a candidate is
    missing, then five presence flags, then the optional extra column.
    """
    n_dates = fcst_values.shape[0]
    n_cells = len(candidates)
    k = 2 * N_CANDIDATES + (0 if extra is None else 1)
    feats = np.zeros((n_dates, n_cells, k))
    for cell, cand in enumerate(candidates):
        idx = list(cand)
        pres = fcst_present[:, idx]
        feats[:, cell, :len(idx)] = np.where(pres, normalize(fcst_values[:, idx], cap), 0.0)
        feats[:, cell, N_CANDIDATES:N_CANDIDATES + len(idx)] = pres
    if extra is not None:
        feats[:, :, -1] = normalize(extra, cap)
    return feats


def _fusion_rows(obs_map, fcst, years):
    """Dates (with full truth) for forecasts whose first target day falls in ``years``."""
    rows = []
    for f in fcst:
        target_year = (f.issue_date + dt.timedelta(days=1)).year
        if not years[0] <= target_year <= years[1]:
            continue
        tr = verifying_truth(obs_map, f.issue_date, f.lead_days)
        if tr is None or not tr[1].all():
            continue
        rows.append((f, tr[0]))
    return rows


def _fit_fusion(x, y, config, seeds, shared, workers):
    n_dates, n_cells, k = x.shape
    if shared:
        runs = fit_ensemble(x.reshape(n_dates * n_cells, k), y.reshape(n_dates * n_cells, 1),
                            fusion_layers(k), config, seeds, workers)
    else:
        runs = fit_ensemble(x, y[:, :, None], fusion_layers(k, n_cells), config, seeds, workers)
    return runs


def _fusion_predict(model: FusionModel, x: np.ndarray) -> np.ndarray:
    n_dates, n_cells, k = x.shape
    preds = []
    for p in model.members:
        if model.shared:
            preds.append(predict(p, x.reshape(n_dates * n_cells, k), model.cap_mm).reshape(n_dates, n_cells))
        else:
            preds.append(predict(p, x, model.cap_mm)[:, :, 0])
    return ensemble_average(preds)


def _fusion_inputs(rows, cands, cap, dlhd_map):
    fv = np.array([f.values for f, _ in rows])
    fp = np.array([f.present for f, _ in rows])
    extra = None
    if dlhd_map is not None:
        extra = np.array([dlhd_map[f.issue_date].values for f, _ in rows])
    x = fusion_features(fv, fp, cands, cap, extra)
    y = np.array([t for _, t in rows])
    return x, y, [f.issue_date for f, _ in rows]


def train_fusion(obs, fcst, grid: GridIndex, source_grid: GridIndex, train_years, dlhd_map=None,
                 config: TrainConfig | None = None, seeds: Sequence[int] = tuple(range(10)),
                 shared: bool = False, workers: int | None = None) -> FusionModel:
    """Fit the candidate-pooling nets on forecasts whose targets fall in ``train_years``."""
    config = config or fusion_config()
    cands = all_candidates(grid, source_grid)
    train_rows = _fusion_rows(by_date(obs), fcst, train_years)
    if not train_rows:
        raise ConfigError(f"no fusion training dates in {tuple(train_years)}")
    # a one-cell grid is the same as one shared net
    shared = shared or len(cands) == 1
    x_tr, y_tr, _ = _fusion_inputs(train_rows, cands, config.output_scale, dlhd_map)
    mean, std = feature_scaling(x_tr)
    runs = _fit_fusion((x_tr - mean) / std, y_tr, config, list(seeds), shared, workers)
    return FusionModel([p for p, _ in runs], [h for _, h in runs], config.output_scale, shared,
                       cands, dlhd_map is not None, mean, std)


def fusion_forecast(model: FusionModel, obs, fcst, test_years, dlhd_map=None) -> list[ForecastField]:
    """Fused forecasts for the issue dates whose targets fall in ``test_years``.

    Only dates with a complete verifying truth are emitted, so every output can be scored.
    """
    if model.with_dlhd and dlhd_map is None:
        raise ConfigError("this fusion model needs DL-HD forecasts")
    rows = _fusion_rows(by_date(obs), fcst, test_years)
    if not rows:
        return []
    x, _, dates = _fusion_inputs(rows, model.candidates, model.cap_mm,
                                 dlhd_map if model.with_dlhd else None)
    return _fields_from(dates, _fusion_predict(model, model.standardize(x)), rows[0][0].lead_days)


def _run_fusion(obs, fcst, grid, source_grid, train_years, test_years, dlhd_map, config, seeds,
                shared, workers):
    model = train_fusion(obs, fcst, grid, source_grid, train_years, dlhd_map, config, seeds,
                         shared, workers)
    return fusion_forecast(model, obs, fcst, test_years, dlhd_map), model


def run_nwp_plus(obs, fcst, grid: GridIndex, source_grid: GridIndex,
                 train_years=(2011, 2020), test_years=(2021, 2022), config: TrainConfig | None = None,
                 seeds: Sequence[int] = tuple(range(10)), shared: bool = False,
                 workers: int | None = None) -> tuple[list[ForecastField], FusionModel]:
    """Per-cell feed-forward pooling of the five candidate NWP forecasts."""
    return _run_fusion(obs, fcst, grid, source_grid, train_years, test_years, None,
                       config or fusion_config(), seeds, shared, workers)


def align_dlhd(obs, fcst, dlhd_forecasts: Sequence[ForecastField], year_ranges,
               align: str = "strict") -> tuple[list[ForecastField], dict]:
    """Pair NWP forecasts with DL-HD forecasts issued on the same date.

    Only issue dates whose first target day falls in one of ``year_ranges`` and
    that have an observation are checked. ``"strict"`` raises
    :class:`AlignmentError` listing the NWP dates that lack a DL-HD forecast;
    ``"intersect"`` drops them. Returns the kept NWP forecasts and the DL-HD map.
    """
    if align not in ("strict", "intersect"):
        raise ConfigError("align must be 'strict' or 'intersect'")
    dl_map = {f.issue_date: f for f in dlhd_forecasts}
    leads = {f.lead_days for f in dlhd_forecasts} | {f.lead_days for f in fcst}
    if len(leads) > 1:
        raise AlignmentError(f"DL-HD and NWP forecasts have different leads {sorted(leads)}")

    def in_ranges(d):
        y = (d + dt.timedelta(days=1)).year
        return any(r[0] <= y <= r[1] for r in year_ranges)

    obs_dates = {f.date for f in obs}
    missing = [f.issue_date for f in fcst
               if in_ranges(f.issue_date) and f.issue_date in obs_dates and f.issue_date not in dl_map]
    if missing and align == "strict":
        shown = ", ".join(d.isoformat() for d in missing[:10])
        more = f" (+{len(missing) - 10} more)" if len(missing) > 10 else ""
        raise AlignmentError(f"no DL-HD forecast for NWP issue dates: {shown}{more}")
    return [f for f in fcst if f.issue_date in dl_map], dl_map


def run_nwp_dlhd(obs, fcst, dlhd_forecasts: Sequence[ForecastField], grid: GridIndex,
                 source_grid: GridIndex, train_years=(2011, 2020), test_years=(2021, 2022),
                 config: TrainConfig | None = None, seeds: Sequence[int] = tuple(range(10)),
                 shared: bool = False, workers: int | None = None,
                 align: str = "strict") -> tuple[list[ForecastField], FusionModel]:
    """NWP+ with the DL-HD forecast as a sixth input (see :func:`align_dlhd`)."""
    fcst, dl_map = align_dlhd(obs, fcst, dlhd_forecasts, (train_years, test_years), align)
    return _run_fusion(obs, fcst, grid, source_grid, train_years, test_years, dl_map,
                       config or fusion_config(), seeds, shared, workers)


@dataclass
class LagRow:
    context_days: int
    ensemble_loss: float | None
    seed_losses: list[float]

    @property
    def seed_mean(self) -> float | None:
        return float(np.mean(self.seed_losses)) if self.seed_losses else None

    @property
    def seed_se(self) -> float | None:
        k = len(self.seed_losses)
        if k < 2:
            return 0.0 if k else None
        return float(np.std(self.seed_losses, ddof=1) / math.sqrt(k))


def lag_sweep(fields: Sequence[DailyField], d_values: Sequence[int], spec: PipelineSpec,
              config: TrainConfig | None = None, layers_for=None,
              workers: int | None = None) -> list[LagRow]:
    """Test loss of DL-HD at each context length, same seeds for every ``d``.

    ``layers_for(n_cells)`` overrides the preset network.
    """
    if not d_values:
        raise ConfigError("lag sweep needs at least one context length")
    rows = []
    for d in d_values:
        s = replace(spec, context_days=d)
        train, test = make_windows(fields, d, s.split)
        if len(train) == 0 or len(test) == 0:
            rows.append(LagRow(d, None, []))
            continue
        n_cells = train.target1.shape[1]
        layers = layers_for(n_cells) if layers_for else None
        model = train_dl_hd(train, n_cells, s.preset, s.seeds,
                            config or dlhd_config(s.preset, s.cap_mm), layers, workers)
        preds = model.member_predictions(test)
        head = slice(0, n_cells) if s.lead_days == 1 else slice(n_cells, 2 * n_cells)
        truth = test.target(s.lead_days)
        seed_losses = [peak_biased_loss(p[:, head], truth) for p in preds]
        rows.append(LagRow(d, peak_biased_loss(ensemble_average(preds)[:, head], truth), seed_losses))
    return rows
