"""Uniformly sampled water-level series on an integer hour grid.

All values are centimetres. A series is immutable after construction;
derived series are new objects. Time is plain integer hours relative to
the run epoch -- no calendars, time zones or sub-hour sampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MismatchedStep, OutOfRange


@dataclass(frozen=True)
class TimeSeries:
    """Water levels sampled every ``step_hours`` starting at ``start_hour``.

    The sample at index ``i`` belongs to hour ``start_hour + i * step_hours``.
    """

    start_hour: int
    values: np.ndarray = field(repr=False)
    step_hours: int = 1

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("values must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(arr)):
            raise ValueError("values must be finite")
        if int(self.step_hours) < 1:
            raise ValueError(f"step_hours must be >= 1, got {self.step_hours}")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "start_hour", int(self.start_hour))
        object.__setattr__(self, "step_hours", int(self.step_hours))

    def __len__(self) -> int:
        return len(self.values)

    @property
    def end_hour(self) -> int:
        """Hour of the last sample (inclusive)."""
        return self.start_hour + (len(self.values) - 1) * self.step_hours

    @property
    def hours(self) -> np.ndarray:
        return self.start_hour + self.step_hours * np.arange(len(self.values))

    def covers(self, hour: int) -> bool:
        if hour < self.start_hour or hour > self.end_hour:
            return False
        return (hour - self.start_hour) % self.step_hours == 0

    def index_of(self, hour: int) -> int:
        if not self.covers(hour):
            raise OutOfRange(f"hour {hour} not on grid [{self.start_hour}, {self.end_hour}]")
        return (hour - self.start_hour) // self.step_hours

    def value_at(self, hour: int) -> float:
        return float(self.values[self.index_of(hour)])

    def shifted(self, hours: int) -> TimeSeries:
        """Same values relabelled ``hours`` later."""
        return TimeSeries(self.start_hour + int(hours), self.values, self.step_hours)

    def with_values(self, values: np.ndarray) -> TimeSeries:
        if len(values) != len(self.values):
            raise ValueError("replacement values must keep the series length")
        return TimeSeries(self.start_hour, values, self.step_hours)


def overlap(a: TimeSeries, b: TimeSeries) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Arrays (hours, values_a, values_b) at hours both series sample.

    Empty arrays when the grids do not intersect. Raises MismatchedStep
    when the sampling steps differ.
    """
    if a.step_hours != b.step_hours:
        raise MismatchedStep(f"step {a.step_hours} vs {b.step_hours}")
    step = a.step_hours
    if (a.start_hour - b.start_hour) % step != 0:
        empty = np.empty(0)
        return empty.astype(np.int64), empty, empty
    lo = max(a.start_hour, b.start_hour)
    hi = min(a.end_hour, b.end_hour)
    if lo > hi:
        empty = np.empty(0)
        return empty.astype(np.int64), empty, empty
    hours = np.arange(lo, hi + 1, step, dtype=np.int64)
    ia = (lo - a.start_hour) // step
    ib = (lo - b.start_hour) // step
    n = len(hours)
    return hours, a.values[ia:ia + n], b.values[ib:ib + n]


def align(a: TimeSeries, b: TimeSeries) -> list[tuple[int, float, float]]:
    """Pair the two series at every hour present in both.

    Returns ``[(hour, value_a, value_b), ...]``; an empty list is a valid
    result for disjoint series.
    """
    hours, va, vb = overlap(a, b)
    return [(int(h), float(x), float(y)) for h, x, y in zip(hours, va, vb)]


def window(s: TimeSeries, from_hour: int, to_hour: int) -> TimeSeries:
    """Sub-series covering ``[from_hour, to_hour]``; the original is untouched."""
    if from_hour > to_hour:
        raise ValueError(f"empty window [{from_hour}, {to_hour}]")
    if not (s.covers(from_hour) and s.covers(to_hour)):
        raise OutOfRange(
            f"window [{from_hour}, {to_hour}] not within series "
            f"[{s.start_hour}, {s.end_hour}] on step {s.step_hours}"
        )
    i0 = s.index_of(from_hour)
    i1 = s.index_of(to_hour)
    return TimeSeries(from_hour, s.values[i0:i1 + 1], s.step_hours)
