"""``key=value`` run configuration shared by every CLI command.

Example::

    # data
    rainfall = rainfall.csv
    grid = grid.txt
    forecasts = forecast.csv
    nwp_grid = nwp_grid.txt

    # split and pipeline
    train_years = 2008-2015
    test_years = 2016-2022
    months = 6,7,8,9
    normalize_cap_mm = 500
    pipeline = dl_hd
    context_days = 8
    lead_days = 1
    ensemble_runs = 3

Relative paths are resolved against the directory of the config file.
Command-line flags override the matching keys.
"""

from __future__ import annotations

import configparser
import datetime as dt
import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .ingest import DEFAULT_CAP_MM, JJAS, SplitSpec

_SECTION = "run"
PATH_KEYS = ("rainfall", "grid", "forecasts", "nwp_grid", "dlhd_forecasts", "cities", "out", "model_dir")


def _years(text: str, key: str) -> tuple[int, int]:
    parts = text.replace(" ", "").split("-")
    try:
        if len(parts) == 1:
            y = int(parts[0])
            return (y, y)
        if len(parts) == 2:
            return (int(parts[0]), int(parts[1]))
    except ValueError:
        pass
    raise ConfigError(f"{key}: expected a year or a range like 2011-2020, got {text!r}")


def _int_list(text: str, key: str) -> tuple[int, ...]:
    """``3,6,12`` or ``3-20`` (inclusive) or a mix of both."""
    out = []
    try:
        for part in text.replace(" ", "").split(","):
            if not part:
                continue
            if "-" in part:
                a, b = part.split("-")
                out.extend(range(int(a), int(b) + 1))
            else:
                out.append(int(part))
    except ValueError:
        raise ConfigError(f"{key}: expected integers like 3,6,12 or 3-20, got {text!r}") from None
    if not out:
        raise ConfigError(f"{key}: empty list")
    return tuple(out)


def _bool(text: str, key: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected true/false, got {text!r}")


def _date(text: str, key: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError:
        raise ConfigError(f"{key}: expected YYYY-MM-DD, got {text!r}") from None


def _pairs(text: str, key: str) -> tuple[tuple[str, str], ...]:
    """``DL-HD=forecast.csv, NWP=nwp.csv``"""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ConfigError(f"{key}: expected name=path entries, got {part!r}")
        name, path = part.split("=", 1)
        out.append((name.strip(), path.strip()))
    return tuple(out)


@dataclass(frozen=True)
class RunConfig:
    # inputs
    rainfall: Path | None = None
    grid: Path | None = None
    forecasts: Path | None = None
    nwp_grid: Path | None = None
    dlhd_forecasts: Path | None = None
    cities: Path | None = None
    out: Path = Path("monsoon_out")
    model_dir: Path | None = None
    # split
    train_years: tuple[int, int] = (1901, 2010)
    test_years: tuple[int, int] = (2012, 2022)
    months: tuple[int, ...] = JJAS
    normalize_cap_mm: float = DEFAULT_CAP_MM
    # pipeline
    pipeline: str = "dl_hd"
    context_days: int = 12
    lead_days: int = 1
    ensemble_runs: int = 10
    preset: str = "desk"
    seed: int = 0
    hidden: int | None = None
    max_epochs: int | None = None
    patience: int | None = None
    batch_size: int | None = None
    learning_rate: float | None = None
    # NWP pipelines
    calibration_years: tuple[int, int] | None = None
    fusion_train_years: tuple[int, int] = (2011, 2020)
    fusion_test_years: tuple[int, int] = (2021, 2022)
    fusion_shared: bool = False
    align: str = "strict"
    # lag sweep
    lag_days: tuple[int, ...] = tuple(range(3, 21))
    # evaluate / report
    predictions: tuple[tuple[str, str], ...] = ()
    reference: str | None = None
    report_date: dt.date | None = None
    report_city: str | None = None
    heatmap_max_mm: float = 100.0
    # synth
    synth_kind: str = "advection"
    # bookkeeping, not a key
    source: Path | None = field(default=None, compare=False)
    text: str = field(default="", compare=False)

    @property
    def split(self) -> SplitSpec:
        return SplitSpec(self.train_years, self.test_years, self.months)

    @property
    def seeds(self) -> list[int]:
        return [self.seed + k for k in range(self.ensemble_runs)]

    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()


_PARSERS = {
    "train_years": _years, "test_years": _years, "calibration_years": _years,
    "fusion_train_years": _years, "fusion_test_years": _years,
    "months": _int_list, "lag_days": _int_list,
    "fusion_shared": _bool,
    "report_date": _date,
    "predictions": _pairs,
}
_INTS = {"context_days", "lead_days", "ensemble_runs", "seed", "hidden", "max_epochs", "patience",
         "batch_size"}
_FLOATS = {"normalize_cap_mm", "learning_rate", "heatmap_max_mm"}
KEYS = tuple(f.name for f in fields(RunConfig) if f.name not in ("source", "text"))


def parse_text(text: str, where: str = "<config>") -> dict[str, str]:
    """Raw ``key -> value`` strings; duplicate or malformed lines are errors."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",),
                                   delimiters=("=",), strict=True)
    cp.optionxform = str
    try:
        cp.read_string(f"[{_SECTION}]\n" + text, source=where)
    except configparser.Error as exc:
        raise ConfigError(f"{where}: {exc}") from None
    return dict(cp[_SECTION])


def build(raw: dict[str, str], base_dir: Path | None = None, source: Path | None = None,
          text: str = "") -> RunConfig:
    values = {}
    for key, val in raw.items():
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        if val is None or val.strip() == "":
            continue
        val = val.strip()
        try:
            if key in _PARSERS:
                values[key] = _PARSERS[key](val, key)
            elif key in _INTS:
                values[key] = int(val)
            elif key in _FLOATS:
                values[key] = float(val)
            elif key in PATH_KEYS:
                p = Path(val).expanduser()
                values[key] = p if p.is_absolute() or base_dir is None else base_dir / p
            else:
                values[key] = val
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {val!r}") from None
    if "predictions" in values and base_dir is not None:
        values["predictions"] = tuple(
            (n, str(p if Path(p).is_absolute() else base_dir / p)) for n, p in values["predictions"])
    cfg = RunConfig(**values, source=source, text=text)
    cfg.split  # validates the year ranges
    return cfg


def load_config(path, overrides: dict[str, str] | None = None) -> RunConfig:
    """Read a config file and apply ``overrides`` (flag values, still as strings)."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    raw = parse_text(text, str(path))
    applied = {k: str(v) for k, v in (overrides or {}).items() if v is not None}
    raw.update(applied)
    # the digest covers the flags too, so it identifies the effective configuration;
    # the artifact root is left out because it does not change any result
    effective = text + "".join(f"\n{k}={v}" for k, v in sorted(applied.items()) if k != "out")
    cfg = build(raw, path.parent, path, effective)
    # flags are resolved against the working directory, not the config location
    for k in ("out", "cities"):
        if (overrides or {}).get(k) is not None:
            cfg = replace(cfg, **{k: Path(overrides[k])})
    return cfg
