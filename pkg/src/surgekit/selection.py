"""Choosing a single forecast per issue from the candidate set.

Implements the selection toolbox: class labels from observation ranges
and ensemble spread, the two heuristic start-window rules, skill
prediction from early discrepancies, greedy and conservative
(hysteresis) selection, and Markov prediction of the winning
combination form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    HistoryTooShort,
    InsufficientArchive,
    InsufficientCandidates,
    NoCandidates,
    NoStartObservations,
    NoStartOverlap,
    UnknownState,
)
from .metrics import mae
from .series import TimeSeries, overlap

START_WINDOW_HOURS = 6

Range = tuple[str, float, float]  # label, lo (inclusive), hi (exclusive)


def _validate_ranges(ranges: Sequence[Range], lower_bound: float) -> None:
    if not ranges:
        raise ValueError("at least one range required")
    labels = [r[0] for r in ranges]
    if len(set(labels)) != len(labels):
        raise ValueError("range labels must be unique")
    ordered = sorted(ranges, key=lambda r: r[1])
    if ordered[0][1] > lower_bound:
        raise ValueError(f"ranges must cover from {lower_bound}")
    if not math.isinf(ordered[-1][2]):
        raise ValueError("last range must extend to +inf")
    for (_, _, hi), (_, lo, _) in zip(ordered, ordered[1:]):
        if hi != lo:
            raise ValueError("ranges must be disjoint and contiguous")


def _classify(ranges: Sequence[Range], value: float) -> str:
    for label, lo, hi in ranges:
        if lo <= value < hi:
            return label
    raise ValueError(f"no range contains {value}")  # unreachable by invariant


@dataclass(frozen=True)
class ClassSet:
    """Expert-defined observation ranges plus ensemble-spread buckets."""

    explicit_classes: tuple[Range, ...]
    spread_classes: tuple[Range, ...]

    def __post_init__(self) -> None:
        _validate_ranges(self.explicit_classes, float("-inf"))
        # spread is non-negative, so its buckets only need to cover [0, inf)
        _validate_ranges(self.spread_classes, 0.0)


def default_class_set(flood_threshold: float = 160.0, base_level: float = 100.0) -> ClassSet:
    return ClassSet(
        explicit_classes=(
            ("calm", float("-inf"), base_level),
            ("elevated", base_level, flood_threshold),
            ("flood", flood_threshold, float("inf")),
        ),
        spread_classes=(
            ("tight", 0.0, 5.0),
            ("moderate", 5.0, 15.0),
            ("wide", 15.0, float("inf")),
        ),
    )


def classify_observation(class_set: ClassSet, obs_value: float) -> str:
    """Label of the unique observation range containing the value."""
    return _classify(class_set.explicit_classes, obs_value)


def classify_spread(class_set: ClassSet, candidates: Sequence[TimeSeries]) -> str:
    """Bucket the mean max-min spread across the candidates."""
    if len(candidates) < 2:
        raise InsufficientCandidates("spread needs at least 2 candidates")
    steps = {c.step_hours for c in candidates}
    if len(steps) != 1:
        raise ValueError(f"mixed sampling steps {sorted(steps)}")
    step = steps.pop()
    lo = max(c.start_hour for c in candidates)
    hi = min(c.end_hour for c in candidates)
    if lo > hi:
        raise InsufficientCandidates("candidates share no common grid")
    n = (hi - lo) // step + 1
    stack = np.stack([c.values[(lo - c.start_hour) // step:][:n] for c in candidates])
    spread = float(np.mean(stack.max(axis=0) - stack.min(axis=0)))
    return _classify(class_set.spread_classes, spread)


def basic_rule_select(
    sources: Mapping[str, TimeSeries],
    ensemble: TimeSeries,
    obs_at_start: TimeSeries,
    ensemble_id: str = "ensemble",
) -> str:
    """Keep the ensemble unless the two start-window rules vote it out.

    Rule 1 switches when the ensemble sits farther from the start
    observations than every source forecast. Rule 2 switches when, at the
    issue hour, the source values bracket the observation but not the
    ensemble value. A switch returns the source with the lowest
    start-window MAE (ties to the lexicographically smaller id).
    """
    source_errors: dict[str, float] = {}
    for sid, series in sources.items():
        hours, f, o = overlap(series, obs_at_start)
        if len(hours):
            source_errors[sid] = float(np.mean(np.abs(f - o)))
    hours, f, o = overlap(ensemble, obs_at_start)
    if not source_errors or len(hours) == 0:
        raise NoStartObservations("no observations over the candidates' start window")
    ensemble_error = float(np.mean(np.abs(f - o)))

    switch = ensemble_error > max(source_errors.values())
    issue_hour = ensemble.start_hour
    if not switch and obs_at_start.covers(issue_hour):
        at_issue = [
            s.value_at(issue_hour) for s in sources.values() if s.covers(issue_hour)
        ]
        if at_issue and ensemble.covers(issue_hour):
            lo, hi = min(at_issue), max(at_issue)
            obs_value = obs_at_start.value_at(issue_hour)
            ens_value = ensemble.value_at(issue_hour)
            if lo <= obs_value <= hi and not (lo <= ens_value <= hi):
                switch = True
    if not switch:
        return ensemble_id
    return min(source_errors, key=lambda sid: (source_errors[sid], sid))


@dataclass(frozen=True)
class SkillRecord:
    """One archived forecast: early discrepancies and the realised error."""

    x1: float
    x2: float
    error: float


def skill_predictors(candidate: TimeSeries, obs: TimeSeries) -> tuple[float, float]:
    """|candidate - obs| at the first two overlap samples."""
    _, f, o = overlap(candidate, obs)
    if len(f) < 2:
        raise NoStartOverlap("need observations at the first two candidate samples")
    return float(abs(f[0] - o[0])), float(abs(f[1] - o[1]))


def predict_skill(
    candidate: TimeSeries, obs: TimeSeries, archive: Sequence[SkillRecord]
) -> float:
    """Predict the candidate's eventual error from its start discrepancies.

    A linear model error ~ a*x1 + b*x2 + c is fitted to the archive and
    applied to the candidate's own two start discrepancies.
    """
    if len(archive) < 3:
        raise InsufficientArchive(f"need >= 3 archive records, got {len(archive)}")
    x1, x2 = skill_predictors(candidate, obs)
    design = np.array([[1.0, r.x1, r.x2] for r in archive])
    response = np.array([r.error for r in archive])
    coef, *_ = np.linalg.lstsq(design, response, rcond=None)
    return float(coef[0] + coef[1] * x1 + coef[2] * x2)


def select_min_predicted(
    predictions: Mapping[str, float],
    member_counts: Mapping[str, int] | None = None,
) -> str:
    """Candidate with the lowest predicted error.

    Ties prefer fewer members, then the lexicographically smaller id.
    """
    if not predictions:
        raise NoCandidates("no candidates to select from")
    counts = member_counts or {}
    return min(predictions, key=lambda cid: (predictions[cid], counts.get(cid, 1), cid))


@dataclass(frozen=True)
class SelectionState:
    """Strategy memory carried from issue to issue."""

    current_choice: str | None = None
    threshold: float = 0.0
    winner_history: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.threshold < 0:
            raise ValueError("threshold must be >= 0")


def conservative_select(
    state: SelectionState,
    predictions: Mapping[str, float],
    member_counts: Mapping[str, int] | None = None,
) -> tuple[str, SelectionState]:
    """Switch only for a relative improvement larger than the threshold.

    With the current choice still a candidate, a switch happens iff
    (current - best) / current exceeds the state's threshold; otherwise
    the current choice is kept. A missing or absent current choice always
    switches to the greedy pick.
    """
    if not predictions:
        raise NoCandidates("no candidates to select from")
    best = select_min_predicted(predictions, member_counts)
    current = state.current_choice
    if current is None or current not in predictions:
        chosen = best
    else:
        cur = predictions[current]
        improvement = (cur - predictions[best]) / cur if cur > 0 else 0.0
        chosen = best if improvement > state.threshold else current
    new_state = replace(
        state, current_choice=chosen, winner_history=state.winner_history + (chosen,)
    )
    return chosen, new_state


def markov_fit(winner_history: Sequence[str], forms: Sequence[str]) -> np.ndarray:
    """Row-stochastic transition matrix from adjacent winner pairs.

    Add-one smoothing keeps every row usable on short histories.
    """
    if len(winner_history) < 2:
        raise HistoryTooShort("need at least 2 winners to count transitions")
    index = {form: i for i, form in enumerate(forms)}
    unknown = [w for w in winner_history if w not in index]
    if unknown:
        raise UnknownState(f"winners not in form set: {sorted(set(unknown))}")
    n = len(forms)
    counts = np.zeros((n, n))
    for a, b in zip(winner_history, winner_history[1:]):
        counts[index[a], index[b]] += 1
    smoothed = counts + 1.0
    return smoothed / smoothed.sum(axis=1, keepdims=True)


def markov_predict(matrix: np.ndarray, last_winner: str, forms: Sequence[str]) -> str:
    """Most likely next form after ``last_winner``; ties to the lowest index."""
    index = {form: i for i, form in enumerate(forms)}
    if last_winner not in index:
        raise UnknownState(f"{last_winner!r} is not a known form")
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape != (len(forms), len(forms)):
        raise ValueError("matrix shape does not match the form set")
    if not np.allclose(matrix.sum(axis=1), 1.0, atol=1e-9):
        raise ValueError("matrix rows must sum to 1")
    row = matrix[index[last_winner]]
    return forms[int(np.argmax(row))]
