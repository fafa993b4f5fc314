"""Threshold-exceeding peak description and peak-targeted transformation.

A peak is a maximal run of samples strictly above the threshold. It is
described by the maximum level H, the hour of the maximum T, the up- and
down-crossing hours T_L and T_R found by linear interpolation between the
straddling samples, the width W = T_R - T_L and the asymmetry
D = (T - T_L) / W. Runs truncated by the series boundary use the boundary
as the crossing and are flagged partial.

The transformation pipeline shifts each source's peak to a regressed
target time, combines the shifted forecasts, re-centres the combined peak
on the target time and rescales the above-threshold excess so the maximum
matches the regressed target height. The rescaling multiplies values by a
factor that equals 1 at the crossings (where the level equals the
threshold) and reaches its extreme at the maximum, so nothing outside the
peak is touched.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import TYPE_CHECKING, Mapping, Sequence

import numpy as np

from .errors import (
    InsufficientArchive,
    MissingSourcePeak,
    NoCombinedPeak,
    NoPeakInSource,
    ShiftOutOfRange,
)
from .series import TimeSeries

if TYPE_CHECKING:
    from .ensemble import EnsembleSpec

_CONSISTENCY_TOL = 1e-9
MATCH_WINDOW_HOURS = 12.0


@dataclass(frozen=True)
class PeakParams:
    """Descriptor of one above-threshold excursion.

    All times are hours on the series clock. ``partial`` marks peaks cut
    off by the series boundary.
    """

    H: float
    T: float
    T_L: float
    T_R: float
    W: float
    D: float
    partial: bool = False

    def __post_init__(self) -> None:
        if not (self.T_L - _CONSISTENCY_TOL <= self.T <= self.T_R + _CONSISTENCY_TOL):
            raise ValueError(f"T={self.T} outside [T_L={self.T_L}, T_R={self.T_R}]")
        if self.W <= 0:
            raise ValueError(f"peak width must be positive, got {self.W}")
        if abs(self.W - (self.T_R - self.T_L)) > _CONSISTENCY_TOL:
            raise ValueError("W must equal T_R - T_L")
        if not (-_CONSISTENCY_TOL <= self.D <= 1 + _CONSISTENCY_TOL):
            raise ValueError(f"D={self.D} outside [0, 1]")
        if abs(self.D * self.W - (self.T - self.T_L)) > 1e-6 * max(1.0, self.W):
            raise ValueError("D must equal (T - T_L) / W")

    @classmethod
    def from_crossings(
        cls, H: float, T: float, T_L: float, T_R: float, partial: bool = False
    ) -> "PeakParams":
        width = T_R - T_L
        return cls(H, T, T_L, T_R, width, (T - T_L) / width, partial)

    def to_dict(self) -> dict:
        return {
            "H": self.H,
            "T": self.T,
            "T_L": self.T_L,
            "T_R": self.T_R,
            "W": self.W,
            "D": self.D,
            "partial": self.partial,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _interp_crossing(h0: float, v0: float, h1: float, v1: float, threshold: float) -> float:
    # v0 and v1 straddle the threshold; v1 != v0 by construction.
    return h0 + (h1 - h0) * (threshold - v0) / (v1 - v0)


def detect_peaks(series: TimeSeries, threshold: float) -> list[PeakParams]:
    """One PeakParams per maximal run of samples strictly above threshold.

    Equality with the threshold does not start a peak. A series that
    never exceeds the threshold yields an empty list.
    """
    values = series.values
    hours = series.hours.astype(np.float64)
    above = values > threshold
    if not above.any():
        return []
    peaks: list[PeakParams] = []
    n = len(values)
    i = 0
    while i < n:
        if not above[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and above[j + 1]:
            j += 1
        run = values[i:j + 1]
        k = int(np.argmax(run))
        H = float(run[k])
        T = float(hours[i + k])
        partial = False
        if i == 0:
            T_L = float(hours[0])
            partial = True
        else:
            T_L = _interp_crossing(hours[i - 1], values[i - 1], hours[i], values[i], threshold)
        if j == n - 1:
            T_R = float(hours[n - 1])
            partial = True
        else:
            T_R = _interp_crossing(hours[j], values[j], hours[j + 1], values[j + 1], threshold)
        if T_R > T_L:  # zero-width boundary runs carry no usable shape
            peaks.append(PeakParams.from_crossings(H, T, T_L, T_R, partial))
        i = j + 1
    return peaks


def match_peak(
    peaks: Sequence[PeakParams], target_t: float, window: float = MATCH_WINDOW_HOURS
) -> PeakParams | None:
    """The peak whose T is nearest to target_t within +-window hours."""
    best = None
    best_gap = window
    for peak in peaks:
        gap = abs(peak.T - target_t)
        if gap <= best_gap:
            best, best_gap = peak, gap
    return best

_PARAM_NAMES = ("H", "T", "W", "D")


def predict_target_peak(
    source_peaks: Mapping[str, PeakParams],
    archive: Sequence[tuple[Mapping[str, PeakParams], PeakParams]],
) -> PeakParams:
    """Regress the observed peak's parameters from the sources' parameters.

    Each of H, T, W and D is fitted independently by least squares with an
    intercept over the archive of (source peaks, observed peak) records.
    T_L and T_R are reconstructed from the predicted (T, W, D).
    """
    ids = sorted(source_peaks)
    if not ids:
        raise MissingSourcePeak("no source peaks supplied")
    if len(archive) < len(ids) + 2:
        raise InsufficientArchive(
            f"need at least {len(ids) + 2} archive records, got {len(archive)}"
        )
    for record, _ in archive:
        missing = [sid for sid in ids if sid not in record]
        if missing:
            raise MissingSourcePeak(f"archive record lacks sources: {missing}")

    predicted: dict[str, float] = {}
    for name in _PARAM_NAMES:
        design = np.array(
            [[1.0] + [getattr(record[sid], name) for sid in ids] for record, _ in archive]
        )
        response = np.array([getattr(observed, name) for _, observed in archive])
        coef, *_ = np.linalg.lstsq(design, response, rcond=None)
        row = np.array([1.0] + [getattr(source_peaks[sid], name) for sid in ids])
        predicted[name] = float(row @ coef)

    width = predicted["W"]
    if width <= 0:
        raise InsufficientArchive("archive regression produced a non-positive width")
    asym = min(1.0, max(0.0, predicted["D"]))
    t_left = predicted["T"] - asym * width
    return PeakParams(predicted["H"], predicted["T"], t_left, t_left + width, width, asym)


def _segment_indices(series: TimeSeries, peak: PeakParams) -> tuple[int, int]:
    hours = series.hours
    left = int(np.searchsorted(hours, peak.T_L, side="left"))
    right = int(np.searchsorted(hours, peak.T_R, side="right")) - 1
    return left, right


def shift_peak(series: TimeSeries, peak: PeakParams, target_t: float) -> TimeSeries:
    """Translate the samples in [T_L, T_R] so the maximum lands at target_t.

    The translation is rounded to whole steps. Samples vacated by the move
    are filled by linear interpolation between the surrounding values; the
    series extent is unchanged.
    """
    step = series.step_hours
    k = int(round((target_t - peak.T) / step))
    if k == 0:
        return series
    left, right = _segment_indices(series, peak)
    n = len(series.values)
    new_left, new_right = left + k, right + k
    if new_left < 0 or new_right > n - 1:
        raise ShiftOutOfRange(
            f"shift by {k} steps pushes peak outside the series of length {n}"
        )
    out = series.values.copy()
    out[new_left:new_right + 1] = series.values[left:right + 1]
    if k > 0:
        gap_lo, gap_hi = left, min(right, new_left - 1)
        anchor_left = gap_lo - 1
        anchor_right = gap_hi + 1
    else:
        gap_lo, gap_hi = max(left, new_right + 1), right
        anchor_left = gap_lo - 1
        anchor_right = gap_hi + 1 if gap_hi + 1 < n else -1
    if gap_lo <= gap_hi:
        left_val = out[anchor_left] if anchor_left >= 0 else None
        right_val = out[anchor_right] if 0 <= anchor_right < n else None
        if left_val is None and right_val is None:
            raise ShiftOutOfRange("no anchor values around the vacated segment")
        if left_val is None:
            out[gap_lo:gap_hi + 1] = right_val
        elif right_val is None:
            out[gap_lo:gap_hi + 1] = left_val
        else:
            span = anchor_right - anchor_left
            for idx in range(gap_lo, gap_hi + 1):
                frac = (idx - anchor_left) / span
                out[idx] = left_val + frac * (right_val - left_val)
    return series.with_values(out)


def rescale_peak_height(
    series: TimeSeries, peak: PeakParams, threshold: float, target_h: float
) -> TimeSeries:
    """Scale the above-threshold excess so the maximum equals target_h.

    Multiplicative in the excess over the threshold, so the factor applied
    to the level tapers to 1 at the crossings and nothing outside
    [T_L, T_R] changes.
    """
    if peak.H <= threshold:
        raise NoCombinedPeak("peak does not exceed the threshold")
    scale = (target_h - threshold) / (peak.H - threshold)
    left, right = _segment_indices(series, peak)
    out = series.values.copy()
    seg = out[left:right + 1]
    out[left:right + 1] = threshold + (seg - threshold) * scale
    return series.with_values(out)


def transform_ensemble(
    forecasts: Mapping[str, TimeSeries],
    spec: "EnsembleSpec",
    target: PeakParams,
    threshold: float,
    sources: Sequence[str],
    forms: Mapping[str, object] | None = None,
    match_window: float = MATCH_WINDOW_HOURS,
) -> TimeSeries:
    """Shift member peaks to the target time, combine, re-centre and rescale.

    Steps: (a) each masked member's peak nearest the target T is shifted
    to the target T; (b) the combination spec is evaluated on the shifted
    members; (c) the combined peak is re-centred on the target T and its
    excess rescaled so the maximum equals the target H.
    """
    from .ensemble import evaluate_spec

    member_ids = spec.member_ids(sources)
    shifted: dict[str, TimeSeries] = dict(forecasts)
    for sid in member_ids:
        if sid not in forecasts:
            raise NoPeakInSource(f"no forecast for member {sid!r}")
        peaks = detect_peaks(forecasts[sid], threshold)
        matched = match_peak(peaks, target.T, match_window)
        if matched is None:
            raise NoPeakInSource(f"source {sid!r} has no peak within "
                                 f"{match_window} h of the target")
        shifted[sid] = shift_peak(forecasts[sid], matched, target.T)

    combined = evaluate_spec(spec, shifted, sources, forms=forms)
    peak = match_peak(detect_peaks(combined, threshold), target.T, match_window)
    if peak is None:
        raise NoCombinedPeak("combined forecast has no peak near the target")
    recentred = shift_peak(combined, peak, target.T)
    peak = match_peak(detect_peaks(recentred, threshold), target.T, match_window)
    if peak is None:
        raise NoCombinedPeak("combined peak lost while re-centring")
    return rescale_peak_height(recentred, peak, threshold, target.H)
