"""Forecast catalog: per-source forecast issues plus gauge observations.

The on-disk format is two CSV files. Observations: header ``hour,level_cm``,
one row per hour. Forecasts: header ``source_id,issue_hour,lead_hour,level_cm``.
Comma separated, ``.`` decimal point, UTF-8, LF line endings. Floats are
written with ``repr`` so a round trip reproduces every value exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .series import TimeSeries

HORIZON_MIN_HOURS = 60
HORIZON_MAX_HOURS = 192
DEFAULT_ISSUE_INTERVAL = 6


@dataclass(frozen=True)
class ForecastRecord:
    """One forecast issue from one source.

    The series starts at the issue hour and spans exactly the horizon,
    so a 60 h forecast carries lead hours 0..60.
    """

    source_id: str
    issue_hour: int
    horizon_hours: int
    series: TimeSeries

    def __post_init__(self) -> None:
        if not (HORIZON_MIN_HOURS <= self.horizon_hours <= HORIZON_MAX_HOURS):
            raise ValueError(
                f"horizon {self.horizon_hours} h outside "
                f"[{HORIZON_MIN_HOURS}, {HORIZON_MAX_HOURS}]"
            )
        if self.series.start_hour != self.issue_hour:
            raise ValueError("forecast series must start at the issue hour")
        span = self.series.end_hour - self.series.start_hour
        if span != self.horizon_hours:
            raise ValueError(
                f"series spans {span} h but horizon is {self.horizon_hours} h"
            )


@dataclass(frozen=True)
class SourceCatalog:
    """All forecasts of all sources plus the observation series."""

    sources: tuple[str, ...]
    forecasts: dict[tuple[str, int], ForecastRecord]
    observations: TimeSeries
    issue_interval: int = DEFAULT_ISSUE_INTERVAL

    def __post_init__(self) -> None:
        if len(self.sources) < 1:
            raise ValueError("catalog needs at least one source")
        if len(set(self.sources)) != len(self.sources):
            raise ValueError("duplicate source ids")
        object.__setattr__(self, "sources", tuple(self.sources))
        known = set(self.sources)
        for (sid, issue), rec in self.forecasts.items():
            if sid not in known:
                raise ValueError(f"forecast source {sid!r} not in sources")
            if (sid, issue) != (rec.source_id, rec.issue_hour):
                raise ValueError("forecast key does not match its record")
            if issue % self.issue_interval != 0:
                raise ValueError(
                    f"issue hour {issue} not on the {self.issue_interval} h cadence"
                )

    def issues(self) -> list[int]:
        """Sorted distinct issue hours present in the catalog."""
        return sorted({issue for (_, issue) in self.forecasts})

    def forecasts_at(self, issue_hour: int) -> dict[str, TimeSeries]:
        """Map source id -> forecast series for one issue; sources without
        a forecast at that issue are simply absent."""
        out: dict[str, TimeSeries] = {}
        for sid in self.sources:
            rec = self.forecasts.get((sid, issue_hour))
            if rec is not None:
                out[sid] = rec.series
        return out


def _fmt(x: float) -> str:
    return repr(float(x))


def write_observations(series: TimeSeries, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hour", "level_cm"])
        for hour, value in zip(series.hours, series.values):
            w.writerow([int(hour), _fmt(value)])


def read_observations(path: str | Path) -> TimeSeries:
    hours: list[int] = []
    values: list[float] = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            hours.append(int(row["hour"]))
            values.append(float(row["level_cm"]))
    if not hours:
        raise ValueError(f"{path}: no observation rows")
    steps = np.diff(hours)
    if len(steps) and (steps <= 0).any():
        raise ValueError(f"{path}: hours must be strictly increasing")
    step = int(steps[0]) if len(steps) else 1
    if len(steps) and not (steps == step).all():
        raise ValueError(f"{path}: observation hours are not uniformly spaced")
    return TimeSeries(hours[0], np.array(values), step)


def write_forecasts(records: list[ForecastRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source_id", "issue_hour", "lead_hour", "level_cm"])
        for rec in records:
            for hour, value in zip(rec.series.hours, rec.series.values):
                w.writerow(
                    [rec.source_id, rec.issue_hour, int(hour) - rec.issue_hour, _fmt(value)]
                )


def read_forecasts(path: str | Path, step_hours: int = 1) -> list[ForecastRecord]:
    rows: dict[tuple[str, int], list[tuple[int, float]]] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["source_id"], int(row["issue_hour"]))
            rows.setdefault(key, []).append((int(row["lead_hour"]), float(row["level_cm"])))
    records = []
    for (sid, issue), leads in sorted(rows.items()):
        leads.sort()
        hours = [lead for lead, _ in leads]
        expected = list(range(hours[0], hours[-1] + step_hours, step_hours))
        if hours != expected:
            raise ValueError(f"{path}: gaps in leads for {sid} at issue {issue}")
        values = np.array([v for _, v in leads])
        series = TimeSeries(issue + hours[0], values, step_hours)
        records.append(ForecastRecord(sid, issue, hours[-1] - hours[0], series))
    return records


def save_catalog(catalog: SourceCatalog, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_observations(catalog.observations, directory / "observations.csv")
    records = [catalog.forecasts[key] for key in sorted(catalog.forecasts)]
    write_forecasts(records, directory / "forecasts.csv")


def load_catalog(
    directory: str | Path, issue_interval: int = DEFAULT_ISSUE_INTERVAL
) -> SourceCatalog:
    directory = Path(directory)
    observations = read_observations(directory / "observations.csv")
    records = read_forecasts(directory / "forecasts.csv")
    sources = tuple(sorted({rec.source_id for rec in records}))
    forecasts = {(rec.source_id, rec.issue_hour): rec for rec in records}
    return SourceCatalog(sources, forecasts, observations, issue_interval)
