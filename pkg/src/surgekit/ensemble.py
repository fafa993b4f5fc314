"""Combinatorial ensemble building over member subsets and regression forms.

For N sources there are 2^N member subsets, from the empty set (which
collapses to the climatological "agnostic" constant) to the full set.
Each subset can be fitted under any number of regression forms, so a
sweep emits up to R * 2^N candidate forecasts per issue. Weights are
fitted by least squares against observations over a trailing training
window; perfectly collinear subsets resolve to the minimum-norm solution
because the sweep legitimately contains them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

import numpy as np

from .catalog import SourceCatalog
from .errors import (
    DegenerateDesign,
    EmptyHistory,
    InsufficientData,
    MismatchedStep,
    MissingMember,
    NoForecastsAtIssue,
    TooFewSources,
)
from .series import TimeSeries, overlap

if TYPE_CHECKING:
    from .symreg import ExprForm

AGNOSTIC = "AGNOSTIC"
LINEAR = "LINEAR"
MEAN = "MEAN"

BUILTIN_FORMS = (AGNOSTIC, LINEAR, MEAN)

MAX_ENUMERATED_SOURCES = 16
DEFAULT_TRAINING_WINDOW_HOURS = 240
ANOMALY_WINDOW_HOURS = 12
ANOMALY_K = 3.0

# Keeps the robust threshold meaningful when the MAD of a tiny distance
# pool degenerates to zero.
_ANOMALY_MAD_FLOOR_FRACTION = 0.1


@dataclass(frozen=True)
class EnsembleSpec:
    """A member subset plus a fitted combination rule.

    ``member_mask`` is a bit set over the catalog's source order. For the
    LINEAR and MEAN forms ``coefficients`` holds one weight per active
    member (mask order); for expression forms it holds the fitted
    constants of the form. AGNOSTIC has an empty mask and stores its
    climatological constant in ``intercept``.
    """

    member_mask: int
    form_id: str
    coefficients: tuple[float, ...]
    intercept: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        if not all(np.isfinite(self.coefficients)) or not np.isfinite(self.intercept):
            raise ValueError("coefficients and intercept must be finite")
        if self.member_mask < 0:
            raise ValueError("member_mask must be non-negative")
        if self.form_id == AGNOSTIC:
            if self.member_mask != 0 or self.coefficients:
                raise ValueError("AGNOSTIC requires an empty mask and no coefficients")
        elif self.form_id in (LINEAR, MEAN):
            if self.member_mask.bit_count() != len(self.coefficients):
                raise ValueError(
                    f"{self.form_id} needs one coefficient per active member"
                )

    def member_indices(self) -> list[int]:
        return [i for i in range(self.member_mask.bit_length()) if self.member_mask >> i & 1]

    def member_ids(self, sources: Sequence[str]) -> list[str]:
        return [sources[i] for i in self.member_indices()]

    def to_dict(self, sources: Sequence[str]) -> dict:
        return {
            "mask": self.member_ids(sources),
            "form": self.form_id,
            "coefficients": list(self.coefficients),
            "intercept": self.intercept,
        }

    def to_json(self, sources: Sequence[str]) -> str:
        return json.dumps(self.to_dict(sources), sort_keys=True)


@dataclass(frozen=True)
class AnomalyVerdict:
    """Windows in which one source drifted away from the others."""

    source_id: str
    flagged_hours: tuple[int, ...]
    scores: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.flagged_hours) != len(self.scores):
            raise ValueError("one score per flagged hour")
        if any(b <= a for a, b in zip(self.flagged_hours, self.flagged_hours[1:])):
            raise ValueError("flagged_hours must be strictly increasing")
        if any(s < 0 for s in self.scores):
            raise ValueError("scores must be >= 0")


def enumerate_subsets(n: int) -> list[int]:
    """All 2^n member masks, ordered by (popcount, numeric value)."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if n > MAX_ENUMERATED_SOURCES:
        raise ValueError(
            f"refusing to enumerate 2^{n} subsets; "
            f"cap is n <= {MAX_ENUMERATED_SOURCES}, pass explicit masks instead"
        )
    return sorted(range(1 << n), key=lambda m: (m.bit_count(), m))


def fit_linear_arrays(
    columns: Sequence[np.ndarray], target: np.ndarray
) -> tuple[tuple[float, ...], float, float]:
    """Least-squares fit of target ~ intercept + sum(c_i * column_i).

    Returns (coefficients, intercept, sse). Rank-deficient designs give
    the minimum-norm solution.
    """
    n = len(target)
    if n == 0:
        raise DegenerateDesign("empty training overlap")
    if n < len(columns) + 2:
        raise InsufficientData(
            f"{n} samples cannot support {len(columns)} members plus intercept"
        )
    design = np.column_stack([np.ones(n)] + [np.asarray(c, dtype=float) for c in columns])
    solution, *_ = np.linalg.lstsq(design, np.asarray(target, dtype=float), rcond=None)
    residual = design @ solution - target
    sse = float(residual @ residual)
    return tuple(float(c) for c in solution[1:]), float(solution[0]), sse


def joint_overlap(
    members: Sequence[TimeSeries], obs: TimeSeries
) -> tuple[np.ndarray, list[np.ndarray], np.ndarray]:
    """(hours, member value arrays, obs values) over the joint overlap."""
    steps = {s.step_hours for s in members} | {obs.step_hours}
    if len(steps) != 1:
        raise MismatchedStep(f"mixed sampling steps {sorted(steps)}")
    step = steps.pop()
    lo = max([s.start_hour for s in members] + [obs.start_hour])
    hi = min([s.end_hour for s in members] + [obs.end_hour])
    for s in list(members) + [obs]:
        if (lo - s.start_hour) % step != 0:
            return np.empty(0, dtype=np.int64), [np.empty(0) for _ in members], np.empty(0)
    if lo > hi:
        return np.empty(0, dtype=np.int64), [np.empty(0) for _ in members], np.empty(0)
    hours = np.arange(lo, hi + 1, step, dtype=np.int64)
    cols = []
    for s in members:
        i = (lo - s.start_hour) // step
        cols.append(s.values[i:i + len(hours)])
    j = (lo - obs.start_hour) // step
    return hours, cols, obs.values[j:j + len(hours)]


def fit_linear(members: Sequence[TimeSeries], obs: TimeSeries) -> tuple[tuple[float, ...], float]:
    """Fit obs ~ intercept + sum(c_i * member_i) over the joint overlap."""
    _, cols, target = joint_overlap(members, obs)
    coefficients, intercept, _ = fit_linear_arrays(cols, target)
    return coefficients, intercept


def agnostic_forecast(
    obs_history: TimeSeries,
    horizon_hours: int,
    start_hour: int | None = None,
    step_hours: int | None = None,
) -> TimeSeries:
    """Constant forecast at the mean of the observation history."""
    if len(obs_history.values) == 0:
        raise EmptyHistory("agnostic forecast needs a non-empty history")
    step = obs_history.step_hours if step_hours is None else step_hours
    start = obs_history.end_hour + step if start_hour is None else start_hour
    level = float(np.mean(obs_history.values))
    n = horizon_hours // step + 1
    return TimeSeries(start, np.full(n, level), step)


def correct_single(
    member: TimeSeries, obs_history: TimeSeries, member_index: int = 0
) -> EnsembleSpec:
    """Bias/gain correction of one source: a singleton-mask linear fit."""
    coefficients, intercept = fit_linear([member], obs_history)
    return EnsembleSpec(1 << member_index, LINEAR, coefficients, intercept)


def _common_grid(series: Iterable[TimeSeries]) -> tuple[int, int, int]:
    series = list(series)
    steps = {s.step_hours for s in series}
    if len(steps) != 1:
        raise MismatchedStep(f"mixed sampling steps {sorted(steps)}")
    step = steps.pop()
    lo = max(s.start_hour for s in series)
    hi = min(s.end_hour for s in series)
    if lo > hi:
        raise MissingMember("members share no common grid")
    return lo, hi, step


def evaluate_spec(
    spec: EnsembleSpec,
    forecasts_at_issue: Mapping[str, TimeSeries],
    sources: Sequence[str],
    obs_history: TimeSeries | None = None,
    forms: Mapping[str, "ExprForm"] | None = None,
) -> TimeSeries:
    """Evaluate a fitted spec on the members of one issue.

    LINEAR and MEAN produce the pointwise weighted sum over the members'
    common grid. AGNOSTIC ignores members and emits its stored constant
    (or the mean of ``obs_history`` when given) on the common grid of all
    supplied forecasts. Expression form ids are looked up in ``forms``
    and evaluated with the spec's fitted constants.
    """
    if spec.form_id == AGNOSTIC:
        if not forecasts_at_issue:
            raise MissingMember("agnostic evaluation needs at least one series for its grid")
        lo, hi, step = _common_grid(forecasts_at_issue.values())
        level = spec.intercept
        if obs_history is not None:
            if len(obs_history.values) == 0:
                raise EmptyHistory("empty observation history")
            level = float(np.mean(obs_history.values))
        return TimeSeries(lo, np.full((hi - lo) // step + 1, level), step)

    member_ids = spec.member_ids(sources)
    missing = [sid for sid in member_ids if sid not in forecasts_at_issue]
    if missing:
        raise MissingMember(f"no forecast for members {missing}")
    members = {sid: forecasts_at_issue[sid] for sid in member_ids}

    if spec.form_id in (LINEAR, MEAN):
        lo, hi, step = _common_grid(members.values())
        n = (hi - lo) // step + 1
        acc = np.full(n, spec.intercept)
        for sid, coef in zip(member_ids, spec.coefficients):
            s = members[sid]
            i = (lo - s.start_hour) // step
            acc = acc + coef * s.values[i:i + n]
        return TimeSeries(lo, acc, step)

    if forms is None or spec.form_id not in forms:
        raise MissingMember(f"unknown regression form {spec.form_id!r}")
    from .symreg import evaluate_form

    form = forms[spec.form_id].with_constants(spec.coefficients)
    return evaluate_form(form, members)


def _training_chunks(
    catalog: SourceCatalog, issue_hour: int, training_window: int
) -> list[tuple[frozenset[str], dict[str, np.ndarray], np.ndarray]]:
    """Pooled (members, observations) samples from past issues.

    Each chunk holds the aligned values of every source present at one
    past issue, restricted to hours not later than the current issue so
    nothing unobservable leaks into the fit.
    """
    obs = catalog.observations
    chunks = []
    for past in catalog.issues():
        if past >= issue_hour or past < issue_hour - training_window:
            continue
        recs = catalog.forecasts_at(past)
        if not recs:
            continue
        lo, hi, step = _common_grid(recs.values())
        hi = min(hi, issue_hour, obs.end_hour)
        lo = max(lo, obs.start_hour)
        if lo > hi:
            continue
        n = (hi - lo) // step + 1
        cols = {}
        for sid, s in recs.items():
            i = (lo - s.start_hour) // step
            cols[sid] = s.values[i:i + n]
        j = (lo - obs.start_hour) // step
        chunks.append((frozenset(recs), cols, obs.values[j:j + n]))
    return chunks


def build_combinatorial_set(
    catalog: SourceCatalog,
    issue_hour: int,
    forms: Sequence[str] = (LINEAR,),
    training_window: int = DEFAULT_TRAINING_WINDOW_HOURS,
    forms_registry: Mapping[str, "ExprForm"] | None = None,
) -> list[tuple[EnsembleSpec, TimeSeries]]:
    """Fit and evaluate every applicable (form, member subset) candidate.

    Subsets range over the sources that actually issued a forecast at
    ``issue_hour``; masks touching missing sources are skipped. The empty
    subset is emitted as AGNOSTIC under every form. Expression forms
    apply only to the subset matching their variable set. Subsets whose
    pooled training data cannot support the fit are skipped, so the
    result holds at most ``len(forms) * 2^N`` candidates.
    """
    from .symreg import fit_constants_arrays

    present = catalog.forecasts_at(issue_hour)
    if not present:
        raise NoForecastsAtIssue(f"no forecasts at hour {issue_hour}")
    present_indices = [i for i, sid in enumerate(catalog.sources) if sid in present]
    masks = [
        sum(1 << present_indices[b] for b in range(len(present_indices)) if local >> b & 1)
        for local in enumerate_subsets(len(present_indices))
    ]

    chunks = _training_chunks(catalog, issue_hour, training_window)
    obs = catalog.observations
    hist_lo = max(obs.start_hour, issue_hour - training_window)
    hist_hi = min(obs.end_hour, issue_hour)
    if hist_lo > hist_hi:
        raise DegenerateDesign("no observations inside the training window")
    i0 = (hist_lo - obs.start_hour) // obs.step_hours
    i1 = (hist_hi - obs.start_hour) // obs.step_hours
    climatology = float(np.mean(obs.values[i0:i1 + 1]))

    def pooled(member_ids: list[str]) -> tuple[list[np.ndarray], np.ndarray]:
        needed = set(member_ids)
        xs: list[list[np.ndarray]] = [[] for _ in member_ids]
        ys = []
        for have, cols, target in chunks:
            if not needed <= have:
                continue
            for slot, sid in enumerate(member_ids):
                xs[slot].append(cols[sid])
            ys.append(target)
        if not ys:
            return [np.empty(0) for _ in member_ids], np.empty(0)
        return [np.concatenate(c) for c in xs], np.concatenate(ys)

    candidates: list[tuple[EnsembleSpec, TimeSeries]] = []
    for form_id in forms:
        if form_id not in BUILTIN_FORMS and (
            forms_registry is None or form_id not in forms_registry
        ):
            raise ValueError(f"unknown regression form {form_id!r}")
        for mask in masks:
            if mask == 0:
                spec = EnsembleSpec(0, AGNOSTIC, (), climatology)
                candidates.append((spec, evaluate_spec(spec, present, catalog.sources)))
                continue
            member_ids = [catalog.sources[i] for i in range(mask.bit_length()) if mask >> i & 1]
            if form_id == LINEAR:
                cols, target = pooled(member_ids)
                try:
                    coefficients, intercept, _ = fit_linear_arrays(cols, target)
                except (InsufficientData, DegenerateDesign):
                    continue
                spec = EnsembleSpec(mask, LINEAR, coefficients, intercept)
            elif form_id == MEAN:
                weight = 1.0 / len(member_ids)
                spec = EnsembleSpec(mask, MEAN, (weight,) * len(member_ids), 0.0)
            else:
                form = forms_registry[form_id]
                if form.variables != frozenset(member_ids):
                    continue
                cols, target = pooled(sorted(member_ids))
                if len(target) == 0:
                    continue
                env = dict(zip(sorted(member_ids), cols))
                constants = fit_constants_arrays(form, env, target)
                spec = EnsembleSpec(mask, form_id, constants, 0.0)
            candidates.append(
                (spec, evaluate_spec(spec, present, catalog.sources, forms=forms_registry))
            )
    return candidates


def detect_anomalies(
    forecasts_at_issue: Mapping[str, TimeSeries],
    window_hours: int = ANOMALY_WINDOW_HOURS,
    k: float = ANOMALY_K,
) -> list[AnomalyVerdict]:
    """Flag sources that drift away from every other source.

    The common grid is tiled into windows of ``window_hours``. Per window
    the mean absolute distance between every source pair is computed;
    each source is summarised by its distance to its nearest other
    source, and flagged when that distance exceeds
    ``median + k * MAD`` of the per-source summaries (the MAD is floored
    at a fraction of the median so a degenerate pool keeps a usable
    threshold). Returns one verdict per source, flagged window start
    hours in increasing order; clean sources carry empty verdicts.
    """
    ids = sorted(forecasts_at_issue)
    if len(ids) < 3:
        raise TooFewSources("pairwise outlying is undefined below 3 sources")
    series = [forecasts_at_issue[sid] for sid in ids]
    lo, hi, step = _common_grid(series)
    n = (hi - lo) // step + 1
    values = np.stack([s.values[(lo - s.start_hour) // step:][:n] for s in series])

    per_window = max(1, window_hours // step)
    flags: dict[str, list[tuple[int, float]]] = {sid: [] for sid in ids}
    m = len(ids)
    for w0 in range(0, n - per_window + 1, per_window):
        block = values[:, w0:w0 + per_window]
        dists = np.zeros((m, m))
        for i in range(m):
            for j in range(i + 1, m):
                d = float(np.mean(np.abs(block[i] - block[j])))
                dists[i, j] = dists[j, i] = d
        nearest = np.array([min(dists[i, j] for j in range(m) if j != i) for i in range(m)])
        med = float(np.median(nearest))
        mad = float(np.median(np.abs(nearest - med)))
        threshold = med + k * max(mad, _ANOMALY_MAD_FLOOR_FRACTION * med)
        hour = int(lo + w0 * step)
        for i in range(m):
            if nearest[i] > threshold:
                flags[ids[i]].append((hour, float(nearest[i])))

    verdicts = []
    for sid in ids:
        hours = tuple(h for h, _ in flags[sid])
        scores = tuple(s for _, s in flags[sid])
        verdicts.append(AnomalyVerdict(sid, hours, scores))
    return verdicts
