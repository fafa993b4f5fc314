"""Distance and quality measures for forecast assessment.

MAE, RMSE and the error standard deviation run over the forecast/observation
overlap. WMAE restricts the MAE to hours where the *observed* level exceeds
the threshold, so the restriction does not depend on the forecast being
scored. DTW is the classic boundary-anchored dynamic program with
|a_i - b_j| step cost and no warping window.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import (
    EmptyOverlap,
    EmptySeries,
    InsufficientOverlap,
    InsufficientPairs,
    NoPairs,
)
from .peaks import PeakParams
from .series import TimeSeries, overlap

PEAK_PAIRING_WINDOW_HOURS = 12.0


def _overlap_or_raise(forecast: TimeSeries, obs: TimeSeries):
    hours, f, o = overlap(forecast, obs)
    if len(hours) == 0:
        raise EmptyOverlap("forecast and observations do not overlap")
    return hours, f, o


def mae(forecast: TimeSeries, obs: TimeSeries) -> float:
    """Mean absolute error over the overlap, in cm."""
    _, f, o = _overlap_or_raise(forecast, obs)
    return float(np.mean(np.abs(f - o)))


def rmse(forecast: TimeSeries, obs: TimeSeries) -> float:
    """Root mean square error over the overlap, in cm."""
    _, f, o = _overlap_or_raise(forecast, obs)
    return float(np.sqrt(np.mean((f - o) ** 2)))


def wmae(forecast: TimeSeries, obs: TimeSeries, threshold: float) -> float | None:
    """MAE restricted to hours with observed level above the threshold.

    Returns None when the overlap never exceeds the threshold.
    """
    _, f, o = _overlap_or_raise(forecast, obs)
    high = o > threshold
    if not high.any():
        return None
    return float(np.mean(np.abs(f[high] - o[high])))


def err_stdev(forecast: TimeSeries, obs: TimeSeries) -> float:
    """Population standard deviation of the error f - o over the overlap."""
    _, f, o = _overlap_or_raise(forecast, obs)
    if len(f) < 2:
        raise InsufficientOverlap("error stdev needs at least 2 overlap samples")
    return float(np.std(f - o))


def dtw(a: TimeSeries, b: TimeSeries) -> float:
    """Dynamic time warping distance between the two series.

    First-to-first / last-to-last anchored, cost |a_i - b_j| per aligned
    pair, match/insert/delete moves, no window, no path-length
    normalisation.
    """
    if len(a.values) == 0 or len(b.values) == 0:
        raise EmptySeries("dtw needs non-empty series")
    va = a.values
    vb = b.values
    n, m = len(va), len(vb)
    prev = np.cumsum(np.abs(va[0] - vb))
    for i in range(1, n):
        cost = np.abs(va[i] - vb)
        # min(prev[j], prev[j-1]) has no serial dependency; the remaining
        # min against new[j-1] is a left-to-right scan.
        pair = prev.copy()
        pair[1:] = np.minimum(prev[1:], prev[:-1])
        new = cost + pair
        run = new[0]
        cost_list = cost.tolist()
        pair_list = pair.tolist()
        out = new.tolist()
        for j in range(1, m):
            best = pair_list[j]
            if run < best:
                best = run
            run = cost_list[j] + best
            out[j] = run
        prev = np.asarray(out)
    return float(prev[-1])


def pair_peaks(
    forecast_peaks: list[PeakParams],
    obs_peaks: list[PeakParams],
    pairing_window: float = PEAK_PAIRING_WINDOW_HOURS,
) -> list[tuple[PeakParams, PeakParams]]:
    """Greedy nearest-T matching within +-pairing_window hours.

    Each peak is used at most once; unmatched peaks are dropped.
    """
    candidates = []
    for i, fp in enumerate(forecast_peaks):
        for j, op in enumerate(obs_peaks):
            gap = abs(fp.T - op.T)
            if gap <= pairing_window:
                candidates.append((gap, i, j))
    candidates.sort()
    used_f: set[int] = set()
    used_o: set[int] = set()
    pairs = []
    for _, i, j in candidates:
        if i in used_f or j in used_o:
            continue
        used_f.add(i)
        used_o.add(j)
        pairs.append((forecast_peaks[i], obs_peaks[j]))
    return pairs


def peak_param_errors(
    forecast_peaks: list[PeakParams],
    obs_peaks: list[PeakParams],
    pairing_window: float = PEAK_PAIRING_WINDOW_HOURS,
) -> tuple[float, float]:
    """(stdev of paired H differences, stdev of paired T differences)."""
    pairs = pair_peaks(forecast_peaks, obs_peaks, pairing_window)
    if not pairs:
        raise NoPairs("no forecast peak pairs with an observed peak")
    if len(pairs) < 2:
        raise InsufficientPairs("peak error stdev needs at least 2 pairs")
    h_diffs = np.array([fp.H - op.H for fp, op in pairs])
    t_diffs = np.array([fp.T - op.T for fp, op in pairs])
    return float(np.std(h_diffs)), float(np.std(t_diffs))


@dataclass(frozen=True)
class MetricReport:
    """Flat bundle of quality measures; absent measures are None."""

    mae: float
    rmse: float
    dtw: float
    err_stdev: float
    wmae: float | None = None
    h_err: float | None = None
    t_err: float | None = None

    def __post_init__(self) -> None:
        for name in ("mae", "rmse", "dtw", "err_stdev", "wmae", "h_err", "t_err"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ValueError(f"{name} must be >= 0, got {value}")

    def to_dict(self) -> dict[str, float]:
        out = {}
        for name in ("mae", "rmse", "dtw", "wmae", "err_stdev", "h_err", "t_err"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def report(
    forecast: TimeSeries, obs: TimeSeries, threshold: float | None = None
) -> MetricReport:
    """Score one forecast against observations over their overlap."""
    return MetricReport(
        mae=mae(forecast, obs),
        rmse=rmse(forecast, obs),
        dtw=dtw(forecast, obs),
        err_stdev=err_stdev(forecast, obs),
        wmae=None if threshold is None else wmae(forecast, obs, threshold),
    )
