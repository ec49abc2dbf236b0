"""Persistence baseline: tomorrow (and the next three days on average) look like today."""

from __future__ import annotations

import datetime as dt
from typing import Iterable, Sequence

from .errors import DataError, MissingDayError
from .ingest import LEADS, DailyField, ForecastField, by_date


def persistence_forecast(fields: Sequence[DailyField] | dict, issue_date: dt.date, lead_days: int) -> ForecastField:
    """Forecast equal to the observed field on ``issue_date``, for either lead."""
    if lead_days not in LEADS:
        raise DataError(f"lead_days must be one of {LEADS}")
    obs = fields if isinstance(fields, dict) else by_date(fields)
    today = obs.get(issue_date)
    if today is None:
        raise MissingDayError(f"no observation on {issue_date}")
    if not today.complete:
        raise MissingDayError(f"observation on {issue_date} has missing cells")
    return ForecastField(issue_date, lead_days, today.values, today.present)


def persistence_forecasts(fields: Sequence[DailyField], issue_dates: Iterable[dt.date],
                          lead_days: int) -> list[ForecastField]:
    obs = by_date(fields)
    return [persistence_forecast(obs, d, lead_days) for d in issue_dates]
