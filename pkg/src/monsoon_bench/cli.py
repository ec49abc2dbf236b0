"""``monsoon-bench`` command line.

Every command reads one ``key=value`` config (see :mod:`monsoon_bench.config`)
and writes into its own directory ``<out>/<command>/`` together with a
``manifest.json``. Later commands find earlier artifacts there: ``predict``
loads the model from ``<out>/train`` and ``evaluate``/``report`` read
``<out>/predict/forecast.csv`` unless ``predictions`` says otherwise.

Exit codes: 0 ok, 2 configuration or usage error, 3 data error, 4 numeric
error, 1 anything else from the toolkit.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as dt
import json
import re
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .atomic import atomic_output, atomic_write_text
from .baseline import persistence_forecasts
from .config import RunConfig, load_config
from .errors import (ConfigError, DataError, EmptyWindowsWarning, EvaluationError, MonsoonBenchError,
                     UsageError)
from .forecasters import (PipelineSpec, align_dlhd, calibrate_match, dlhd_config, dlhd_layers,
                          fusion_config, fusion_forecast, lag_sweep, run_nwp, train_dl_hd,
                          train_fusion)
from .grid import GridIndex, align_grid, load_cities, load_grid
from .ingest import (ForecastField, by_date, load_forecasts, load_rainfall, make_windows,
                     seasons, verifying_truth, write_forecasts)
from .manifest import MANIFEST_NAME, RunManifest
from .metrics import evaluate, far_table, hrp_table, loss_table, summary_table
from .model_store import (load_dlhd, load_fusion, read_match, save_dlhd, save_fusion,
                          write_match)
from .neural import AdamConfig
from .neural.training import worker_count
from .report import emit_heatmap, emit_series_plot

COMMANDS = ("synth", "ingest", "train", "predict", "evaluate", "lag-sweep", "report")
FORECAST_NAME = "forecast.csv"
LABELS = {"dl_hd": "DL-HD", "nwp": "NWP", "nwp_plus": "NWP+", "nwp_dlhd": "NWP+DL-HD",
          "persistence": "Persistence"}


class Run:
    """Per-invocation state: config, output directory and manifest."""

    def __init__(self, command: str, cfg: RunConfig):
        self.command = command
        self.cfg = cfg
        self.dir = Path(cfg.out) / command
        self.dir.mkdir(parents=True, exist_ok=True)
        self.manifest = RunManifest(command, str(cfg.source) if cfg.source else None, cfg.sha256())

    def path(self, name: str) -> Path:
        return self.dir / name

    def emitted(self, path) -> Path:
        self.manifest.add_artifact(self.dir, path)
        return Path(path)

    def inputs(self, *paths) -> None:
        for p in paths:
            if p is None:
                continue
            if not Path(p).is_file():
                raise DataError(f"input file not found: {p}")
            self.manifest.add_input(p)


# ---------------------------------------------------------------- loading helpers

def _need(cfg: RunConfig, key: str) -> Path:
    value = getattr(cfg, key)
    if value is None:
        raise ConfigError(f"config key {key!r} is required for this command")
    return Path(value)


def _target_grid(run: Run) -> GridIndex:
    path = _need(run.cfg, "grid")
    run.inputs(path, run.cfg.cities)
    grid = load_grid(path)
    named, _ = grid.with_names(load_cities(run.cfg.cities))
    return named


def _obs(run: Run, grid: GridIndex):
    path = _need(run.cfg, "rainfall")
    run.inputs(path)
    return load_rainfall(path, grid)


def _nwp(run: Run):
    grid_path, fc_path = _need(run.cfg, "nwp_grid"), _need(run.cfg, "forecasts")
    run.inputs(grid_path, fc_path)
    nwp_grid = load_grid(grid_path)
    fcst = load_forecasts(fc_path, nwp_grid, lead_days=run.cfg.lead_days)
    if not fcst:
        raise DataError(f"{fc_path}: no {run.cfg.lead_days}-day forecasts")
    return align_grid(nwp_grid), fcst


def _dlhd_forecasts(run: Run, grid: GridIndex):
    path = _need(run.cfg, "dlhd_forecasts")
    run.inputs(path)
    return load_forecasts(path, grid, lead_days=run.cfg.lead_days)


def _spec(cfg: RunConfig) -> PipelineSpec:
    return PipelineSpec(cfg.pipeline, cfg.context_days, cfg.lead_days, cfg.split, cfg.preset,
                        cfg.ensemble_runs, cfg.seed, cfg.normalize_cap_mm)


def _train_overrides(cfg: RunConfig) -> dict:
    out = {}
    if cfg.max_epochs is not None:
        out["max_epochs"] = cfg.max_epochs
    if cfg.patience is not None:
        out["early_stop_patience"] = cfg.patience
    if cfg.batch_size is not None:
        out["batch_size"] = cfg.batch_size
    if cfg.learning_rate is not None:
        out["adam"] = AdamConfig(step_size=cfg.learning_rate)
    return out


def _model_dir(cfg: RunConfig) -> Path:
    return Path(cfg.model_dir) if cfg.model_dir else Path(cfg.out) / "train"


def _target_year(issue: dt.date) -> int:
    return (issue + dt.timedelta(days=1)).year


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", name).strip("_").lower() or "model"


def _write_forecast_csv(run: Run, fields, grid: GridIndex, name: str = FORECAST_NAME) -> Path:
    path = run.path(name)
    write_forecasts(fields, grid, path)
    return run.emitted(path)


# ---------------------------------------------------------------- commands

def cmd_synth(run: Run) -> None:
    """Write a synthetic dataset plus a ready-to-use config next to it."""
    from .synthetic import advection_dataset, lag_dataset, white_noise_dataset

    makers = {"advection": advection_dataset, "lag": lag_dataset, "white_noise": white_noise_dataset}
    kind = run.cfg.synth_kind
    if kind not in makers:
        raise ConfigError(f"synth_kind must be one of {sorted(makers)}")
    ds = makers[kind](seed=run.cfg.seed)
    paths = ds.write(run.dir)
    years = sorted({f.date.year for f in ds.obs})
    lines = [f"# synthetic '{kind}' dataset, seed {run.cfg.seed}",
             "rainfall = rainfall.csv", "grid = grid.txt"]
    if "forecast" in paths:
        lines += ["forecasts = forecast.csv", "nwp_grid = nwp_grid.txt"]
    if kind == "advection":
        lines += ["train_years = 2008-2015", "test_years = 2016-2022",
                  "fusion_train_years = 2016-2020", "fusion_test_years = 2021-2022",
                  "context_days = 8"]
    else:
        cut = years[len(years) * 4 // 5]
        lines += [f"train_years = {years[0]}-{cut - 1}", f"test_years = {cut}-{years[-1]}",
                  "context_days = 12"]
    lines += ["ensemble_runs = 3", "lead_days = 1"]
    cfg_path = run.path("config.txt")
    atomic_write_text(cfg_path, "\n".join(lines) + "\n")
    for p in sorted(paths.values()) + [cfg_path]:
        run.emitted(p)


def cmd_ingest(run: Run) -> None:
    """Validate the inputs and cache the supervised windows."""
    cfg = run.cfg
    grid = _target_grid(run)
    obs = _obs(run, grid)
    if not obs:
        raise DataError(f"{cfg.rainfall}: no rainfall rows")
    runs = seasons(obs, cfg.months)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptyWindowsWarning)
        train, test = make_windows(obs, cfg.context_days, cfg.split)
    summary = {
        "cells": grid.count,
        "named_cells": sorted(grid.name_map),
        "days": len(obs),
        "first_date": obs[0].date.isoformat(),
        "last_date": obs[-1].date.isoformat(),
        "season_runs": len(runs),
        "context_days": cfg.context_days,
        "train_windows": len(train),
        "test_windows": len(test),
    }
    if cfg.forecasts is not None:
        _, fcst = _nwp(run)
        summary["forecast_fields"] = len(fcst)
        summary["forecast_lead_days"] = cfg.lead_days
    windows = run.path("windows.npz")
    with atomic_output(windows) as tmp:
        with open(tmp, "wb") as fh:
            np.savez(fh, train_context=train.context, train_target1=train.target1,
                     train_target3=train.target3,
                     train_issue=np.array([d.isoformat() for d in train.issue_dates], dtype="U10"),
                     test_context=test.context, test_target1=test.target1,
                     test_target3=test.target3,
                     test_issue=np.array([d.isoformat() for d in test.issue_dates], dtype="U10"))
    run.emitted(windows)
    path = run.path("summary.json")
    atomic_write_text(path, json.dumps(summary, indent=2, sort_keys=True) + "\n")
    run.emitted(path)
    if len(train) == 0 or len(test) == 0:
        warnings.warn(f"ingest: {len(train)} train / {len(test)} test windows at d={cfg.context_days}",
                      EmptyWindowsWarning, stacklevel=2)


def cmd_train(run: Run) -> None:
    cfg = run.cfg
    spec = _spec(cfg)
    run.manifest.seeds = spec.seeds
    grid = _target_grid(run)
    obs = _obs(run, grid)
    meta = {"lead_days": cfg.lead_days, "config_sha256": cfg.sha256()}
    if cfg.pipeline == "persistence":
        raise UsageError("the persistence pipeline has nothing to train; run predict directly")
    # members from an earlier, larger ensemble must not be picked up by predict
    for old in [*run.dir.glob("*_member_*.json"), run.dir / "match.csv"]:
        old.unlink(missing_ok=True)
    if cfg.pipeline == "dl_hd":
        train, _ = make_windows(obs, cfg.context_days, cfg.split)
        if len(train) == 0:
            raise DataError(f"no training windows at d={cfg.context_days} in {cfg.train_years}")
        n = grid.count
        config = dlhd_config(cfg.preset, cfg.normalize_cap_mm, **_train_overrides(cfg))
        model = train_dl_hd(train, n, cfg.preset, spec.seeds, config,
                            dlhd_layers(n, cfg.preset, cfg.hidden), worker_count())
        for p in save_dlhd(model, run.dir, meta):
            run.emitted(p)
        return
    source, fcst = _nwp(run)
    if cfg.pipeline == "nwp":
        years = cfg.calibration_years or cfg.fusion_train_years
        match = calibrate_match(obs, fcst, grid, source, years)
        path = run.path("match.csv")
        write_match(match, grid, source, path)
        run.emitted(path)
        return
    dl_map = None
    if cfg.pipeline == "nwp_dlhd":
        fcst, dl_map = align_dlhd(obs, fcst, _dlhd_forecasts(run, grid),
                                  (cfg.fusion_train_years,), cfg.align)
    config = fusion_config(cfg.preset, cfg.normalize_cap_mm, **_train_overrides(cfg))
    model = train_fusion(obs, fcst, grid, source, cfg.fusion_train_years, dl_map, config,
                         spec.seeds, cfg.fusion_shared, worker_count())
    for p in save_fusion(model, run.dir, dict(meta, pipeline=cfg.pipeline)):
        run.emitted(p)


def predict_fields(run: Run, grid: GridIndex, obs) -> list[ForecastField]:
    cfg = run.cfg
    mdir = _model_dir(cfg)
    if cfg.pipeline == "persistence":
        obs_map = by_date(obs)
        dates = [f.date for f in obs
                 if cfg.test_years[0] <= _target_year(f.date) <= cfg.test_years[1]
                 and f.complete and verifying_truth(obs_map, f.date, cfg.lead_days) is not None]
        return persistence_forecasts(obs, dates, cfg.lead_days)
    if cfg.pipeline == "dl_hd":
        model = load_dlhd(mdir)
        run.inputs(*sorted(mdir.glob("dlhd_member_*.json")))
        # every window after the training range, so fusion can use them too
        after = dataclasses.replace(cfg.split, test_years=(cfg.train_years[1] + 1, 9999))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", EmptyWindowsWarning)
            _, test = make_windows(obs, model.context_days, after)
        if len(test) == 0:
            warnings.warn("no windows to forecast after the training years", EmptyWindowsWarning,
                          stacklevel=2)
        return model.forecast(test, cfg.lead_days)
    source, fcst = _nwp(run)
    if cfg.pipeline == "nwp":
        path = mdir / "match.csv"
        run.inputs(path)
        match = read_match(path, grid, source)
        lo, hi = cfg.fusion_test_years
        return [f for f in run_nwp(obs, fcst, grid, match) if lo <= _target_year(f.issue_date) <= hi]
    model = load_fusion(mdir)
    run.inputs(*sorted(mdir.glob("fusion_member_*.json")))
    dl_map = None
    if model.with_dlhd:
        fcst, dl_map = align_dlhd(obs, fcst, _dlhd_forecasts(run, grid),
                                  (cfg.fusion_test_years,), cfg.align)
    return fusion_forecast(model, obs, fcst, cfg.fusion_test_years, dl_map)


def cmd_predict(run: Run) -> None:
    grid = _target_grid(run)
    obs = _obs(run, grid)
    _write_forecast_csv(run, predict_fields(run, grid, obs), grid)


def _prediction_sources(run: Run) -> list[tuple[str, Path]]:
    cfg = run.cfg
    if cfg.predictions:
        return [(n, Path(p)) for n, p in cfg.predictions]
    return [(LABELS.get(cfg.pipeline, cfg.pipeline), Path(cfg.out) / "predict" / FORECAST_NAME)]


def _load_predictions(run: Run, grid: GridIndex):
    out = {}
    for name, path in _prediction_sources(run):
        run.inputs(path)
        out[name] = load_forecasts(path, grid, lead_days=run.cfg.lead_days)
        if not out[name]:
            raise DataError(f"{path}: no {run.cfg.lead_days}-day forecasts")
    return out


def cmd_evaluate(run: Run) -> None:
    """Skill of each prediction file, plus persistence, on their shared issue dates."""
    cfg = run.cfg
    grid = _target_grid(run)
    obs = _obs(run, grid)
    preds = _load_predictions(run, grid)
    # every model is scored on the same issue dates
    common = set.intersection(*({f.issue_date for f in fc} for fc in preds.values()))
    if not common:
        raise EvaluationError("the prediction files share no issue dates")
    preds = {n: [f for f in fc if f.issue_date in common] for n, fc in preds.items()}
    if "Persistence" not in preds:
        obs_map = by_date(obs)
        dates = sorted(d for d in common if d in obs_map and obs_map[d].complete)
        preds["Persistence"] = persistence_forecasts(obs, dates, cfg.lead_days)
    reference = cfg.reference or next(iter(preds))
    if reference not in preds:
        raise ConfigError(f"reference {reference!r} is not among {sorted(preds)}")
    reports = {name: evaluate(fc, obs, grid, model=name) for name, fc in preds.items()}
    ref_loss = reports[reference].loss
    for name, rep in reports.items():
        rep.reference_loss = ref_loss
        path = run.path(f"skill_{_slug(name)}.csv")
        rep.to_csv(path)
        run.emitted(path)
    parts = [f"# Skill summary ({cfg.lead_days}-day lead)\n", summary_table(reports, reference)]
    if grid.name_map:
        parts += ["\n## Peak-biased loss by city\n", loss_table(reports, reference),
                  "\n## Heavy-rain warnings\n", hrp_table(reports),
                  "\n## False alarms\n", far_table(reports)]
    path = run.path("summary.md")
    atomic_write_text(path, "\n".join(parts))
    run.emitted(path)


def cmd_lag_sweep(run: Run) -> None:
    cfg = run.cfg
    spec = _spec(dataclasses.replace(cfg, pipeline="dl_hd"))
    run.manifest.seeds = spec.seeds
    grid = _target_grid(run)
    obs = _obs(run, grid)
    config = dlhd_config(cfg.preset, cfg.normalize_cap_mm, **_train_overrides(cfg))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptyWindowsWarning)
        rows = lag_sweep(obs, list(cfg.lag_days), spec, config,
                         lambda n: dlhd_layers(n, cfg.preset, cfg.hidden), worker_count())
    path = run.path("lag_curve.csv")
    with atomic_output(path) as tmp, open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["context_days", "ensemble_loss", "seed_mean", "seed_se", "seed_losses"])
        for r in rows:
            fmt = lambda v: "NA" if v is None else repr(float(v))  # noqa: E731
            w.writerow([r.context_days, fmt(r.ensemble_loss), fmt(r.seed_mean), fmt(r.seed_se),
                        ";".join(repr(float(v)) for v in r.seed_losses)])
    run.emitted(path)


def cmd_report(run: Run) -> None:
    """Rain maps for one issue date, a city time series and an index page."""
    cfg = run.cfg
    grid = _target_grid(run)
    obs = _obs(run, grid)
    name, fc = next(iter(_load_predictions(run, grid).items()))
    obs_map = by_date(obs)
    by_issue = {f.issue_date: f for f in fc}
    date = cfg.report_date or min(by_issue)
    if date not in by_issue:
        raise DataError(f"no {name} forecast issued on {date}")
    scale = (0.0, cfg.heatmap_max_mm)
    f = by_issue[date]
    lines = [f"# {name} report\n", f"Forecasts issued {min(by_issue)} to {max(by_issue)}, "
             f"{cfg.lead_days}-day lead.\n"]
    emitted = []
    path = run.path(f"heatmap_forecast_{date.isoformat()}.pgm")
    emit_heatmap(f.values, grid, scale, path, f.present,
                 f"{name} {cfg.lead_days}-day forecast issued {date}, 0-{scale[1]:g} mm")
    emitted.append(("Forecast map", path))
    truth = verifying_truth(obs_map, date, cfg.lead_days)
    if truth is not None:
        path = run.path(f"heatmap_observed_{date.isoformat()}.pgm")
        emit_heatmap(truth[0], grid, scale, path, truth[1],
                     f"observed {cfg.lead_days}-day rain after {date}, 0-{scale[1]:g} mm")
        emitted.append(("Observed map", path))
    city = cfg.report_city or (sorted(grid.name_map)[0] if grid.name_map else None)
    cell = grid.name_map.get(city, 0) if city else 0
    if city and city not in grid.name_map:
        raise ConfigError(f"report_city {city!r} is not on the grid")
    label = city or f"cell {grid.cells[0].lat_deg:g},{grid.cells[0].lon_deg:g}"
    dates, pred, actual = [], [], []
    for g in fc:
        tr = verifying_truth(obs_map, g.issue_date, cfg.lead_days)
        if tr is None or not g.present[cell] or not tr[1][cell]:
            continue
        dates.append(g.issue_date)
        pred.append(g.values[cell])
        actual.append(tr[0][cell])
    if dates:
        path = run.path(f"series_{_slug(label)}.svg")
        emit_series_plot(pred, actual, dates, path, f"{label}: {name} vs observed")
        emitted.append((f"{label} series", path))
    summary = Path(cfg.out) / "evaluate" / "summary.md"
    if summary.is_file():
        run.inputs(summary)
        lines += ["", summary.read_text()]
    lines.append("\n## Figures\n")
    lines += [f"- {title}: `{p.name}`" for title, p in emitted]
    index = run.path("report.md")
    atomic_write_text(index, "\n".join(lines) + "\n")
    for _, p in emitted:
        run.emitted(p)
    run.emitted(index)


HANDLERS = {"synth": cmd_synth, "ingest": cmd_ingest, "train": cmd_train, "predict": cmd_predict,
            "evaluate": cmd_evaluate, "lag-sweep": cmd_lag_sweep, "report": cmd_report}


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="monsoon-bench",
                                 description="Gridded rainfall forecasting and verification toolkit.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="key=value run configuration")
    ap.add_argument("--out", help="artifact root; each command writes to <out>/<command>/")
    ap.add_argument("--seed", type=int, help="base seed (ensemble member k uses seed+k)")
    ap.add_argument("--cities", help="name,lat,lon CSV of labelled cells")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"out": args.out, "seed": args.seed, "cities": args.cities}
    try:
        cfg = load_config(args.config, overrides)
    except MonsoonBenchError as exc:
        print(f"monsoon-bench: {exc}", file=sys.stderr)
        return exc.exit_code
    run = Run(args.command, cfg)
    code, message = 0, None
    try:
        HANDLERS[args.command](run)
    except MonsoonBenchError as exc:
        code, message = exc.exit_code, f"{type(exc).__name__}: {exc}"
    except OSError as exc:
        code, message = DataError.exit_code, f"{type(exc).__name__}: {exc}"
    finally:
        if code == 0 and sys.exc_info()[0] is not None:
            code, message = 1, "interrupted by an unexpected error"
        run.manifest.finish(code, message)
        run.manifest.write(run.dir)
    if message:
        print(f"monsoon-bench {args.command}: {message}", file=sys.stderr)
    else:
        print(f"monsoon-bench {args.command}: wrote {len(run.manifest.artifacts)} artifact(s) "
              f"to {run.dir}/ ({MANIFEST_NAME} lists them)")
    return code


if __name__ == "__main__":
    sys.exit(main())
