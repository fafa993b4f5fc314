"""Deterministic synthetic storm-surge benchmark.

Truth is a 100 cm base level plus asymmetric triangular surge peaks and a
small smooth oscillation. Source forecasts corrupt the truth with bias,
gain, timing lag and seeded Gaussian noise (numpy's PCG64 generator via
``default_rng``, seeded per source and issue, so catalogs are byte
identical across runs and platforms). One source can degrade: after a
configured hour its noise level switches to a larger sigma.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .catalog import ForecastRecord, SourceCatalog
from .series import TimeSeries

DEFAULT_BASE_LEVEL_CM = 100.0
FLOOD_THRESHOLD_CM = 160.0

_OSC_PERIODS = (37.0, 61.0)  # deliberately incommensurate with the day


@dataclass(frozen=True)
class PeakSpec:
    """One scheduled surge peak added on top of the base level."""

    center_hour: float
    height_cm: float
    width_hours: float
    asymmetry: float = 0.5  # time-to-crest as a fraction of the width

    def __post_init__(self) -> None:
        if self.width_hours <= 0:
            raise ValueError("peak width must be positive")
        if not 0.0 <= self.asymmetry <= 1.0:
            raise ValueError("asymmetry must lie in [0, 1]")


@dataclass(frozen=True)
class SourceSpec:
    """Corruption profile of one forecast source."""

    source_id: str
    bias_cm: float = 0.0
    gain: float = 1.0
    lag_hours: int = 0
    noise_sigma_cm: float = 0.0
    degrade_after_hour: int | None = None
    degraded_sigma_cm: float = 0.0

    def __post_init__(self) -> None:
        if self.noise_sigma_cm < 0 or self.degraded_sigma_cm < 0:
            raise ValueError("noise sigmas must be >= 0")


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    days: int
    sources: tuple[SourceSpec, ...]
    peak_schedule: tuple[PeakSpec, ...] = ()
    base_level_cm: float = DEFAULT_BASE_LEVEL_CM
    oscillation_amplitude_cm: float = 2.0
    horizon_hours: int = 60
    issue_interval: int = 6
    step_hours: int = 1

    def __post_init__(self) -> None:
        if self.days < 1:
            raise ValueError("days must be >= 1")
        if len(self.sources) < 1:
            raise ValueError("need at least one source")
        ids = [s.source_id for s in self.sources]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate source ids")
        if self.oscillation_amplitude_cm < 0:
            raise ValueError("oscillation amplitude must be >= 0")
        object.__setattr__(self, "sources", tuple(self.sources))
        object.__setattr__(self, "peak_schedule", tuple(self.peak_schedule))

    def to_dict(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "days": self.days,
            "sources": [vars(s).copy() for s in self.sources],
            "peak_schedule": [vars(p).copy() for p in self.peak_schedule],
            "base_level_cm": self.base_level_cm,
            "oscillation_amplitude_cm": self.oscillation_amplitude_cm,
            "horizon_hours": self.horizon_hours,
            "issue_interval": self.issue_interval,
            "step_hours": self.step_hours,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScenarioConfig":
        data = dict(data)
        data["sources"] = tuple(SourceSpec(**s) for s in data.get("sources", ()))
        data["peak_schedule"] = tuple(PeakSpec(**p) for p in data.get("peak_schedule", ()))
        return cls(**data)


def _peak_shape(hours: np.ndarray, peak: PeakSpec) -> np.ndarray:
    rise = peak.asymmetry * peak.width_hours
    left = peak.center_hour - rise
    right = left + peak.width_hours
    xp = [left, peak.center_hour, right]
    fp = [0.0, peak.height_cm, 0.0]
    return np.interp(hours, xp, fp, left=0.0, right=0.0)


def generate_truth(config: ScenarioConfig) -> TimeSeries:
    """Deterministic truth series for the whole scenario span."""
    n = config.days * 24 // config.step_hours
    hours = np.arange(n) * config.step_hours
    values = np.full(n, config.base_level_cm)
    for peak in config.peak_schedule:
        values = values + _peak_shape(hours.astype(float), peak)
    if config.oscillation_amplitude_cm > 0:
        rng = np.random.default_rng([config.seed, 0])
        phases = rng.uniform(0, 2 * np.pi, len(_OSC_PERIODS))
        weights = (0.6, 0.4)
        osc = sum(
            w * np.sin(2 * np.pi * hours / p + phi)
            for w, p, phi in zip(weights, _OSC_PERIODS, phases)
        )
        values = values + config.oscillation_amplitude_cm * osc
    return TimeSeries(0, values, config.step_hours)


def _source_noise_sigma(spec: SourceSpec, hours: np.ndarray) -> np.ndarray:
    sigma = np.full(len(hours), spec.noise_sigma_cm)
    if spec.degrade_after_hour is not None:
        sigma[hours >= spec.degrade_after_hour] = spec.degraded_sigma_cm
    return sigma


def generate_source_forecasts(config: ScenarioConfig, truth: TimeSeries) -> SourceCatalog:
    """Forecast catalog for every source and 6-hourly issue.

    forecast(t) = gain * truth(t - lag) + bias + noise(t); a positive lag
    makes the source's surge arrive late. Observations are the truth.
    """
    step = config.step_hours
    horizon = config.horizon_hours
    truth_hours = truth.hours
    forecasts: dict[tuple[str, int], ForecastRecord] = {}
    last_issue = truth.end_hour - horizon
    issues = range(0, last_issue + 1, config.issue_interval)
    for index, spec in enumerate(config.sources):
        for issue in issues:
            hours = np.arange(issue, issue + horizon + 1, step)
            lagged = np.clip(hours - spec.lag_hours, truth.start_hour, truth.end_hour)
            base = np.interp(lagged, truth_hours, truth.values)
            rng = np.random.default_rng([config.seed, index + 1, issue])
            noise = rng.standard_normal(len(hours)) * _source_noise_sigma(spec, hours)
            values = spec.gain * base + spec.bias_cm + noise
            series = TimeSeries(issue, values, step)
            forecasts[(spec.source_id, issue)] = ForecastRecord(
                spec.source_id, issue, horizon, series
            )
    sources = tuple(s.source_id for s in config.sources)
    return SourceCatalog(sources, forecasts, truth, config.issue_interval)


def generate_catalog(config: ScenarioConfig) -> SourceCatalog:
    return generate_source_forecasts(config, generate_truth(config))


def standard_benchmark() -> ScenarioConfig:
    """Fixed 30-day, 3-source benchmark with two flood peaks.

    alpha is unbiased but noisy, bravo carries a constant bias, charlie
    lags the surge by 3 h and degrades badly after hour 360.
    """
    return ScenarioConfig(
        seed=42,
        days=30,
        sources=(
            SourceSpec("alpha", noise_sigma_cm=5.0),
            SourceSpec("bravo", bias_cm=2.0, noise_sigma_cm=5.0),
            SourceSpec(
                "charlie",
                lag_hours=3,
                noise_sigma_cm=5.0,
                degrade_after_hour=360,
                degraded_sigma_cm=25.0,
            ),
        ),
        peak_schedule=(
            PeakSpec(center_hour=200.0, height_cm=90.0, width_hours=36.0, asymmetry=0.4),
            PeakSpec(center_hour=500.0, height_cm=110.0, width_hours=48.0, asymmetry=0.5),
        ),
    )
