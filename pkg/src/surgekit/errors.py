"""Exception hierarchy shared by all surgekit modules."""


class SurgekitError(Exception):
    """Base class for all operational errors raised by this package."""


# --- time-series / catalog ---

class MismatchedStep(SurgekitError):
    """Two series with different sampling steps were combined."""


class OutOfRange(SurgekitError):
    """A requested window or shift exceeds the series extent."""


# --- metrics ---

class EmptyOverlap(SurgekitError):
    """Forecast and observations share no common samples."""


class EmptySeries(SurgekitError):
    """An operation received a series without samples."""


class InsufficientOverlap(SurgekitError):
    """The overlap is non-empty but too short for the statistic."""


class NoPairs(SurgekitError):
    """Peak pairing produced no matched pairs."""


class InsufficientPairs(SurgekitError):
    """Peak pairing produced fewer pairs than the statistic needs."""


# --- ensemble building ---

class InsufficientData(SurgekitError):
    """Too few training samples relative to the number of regressors."""


class DegenerateDesign(SurgekitError):
    """The regression has an empty training overlap."""


class MissingMember(SurgekitError):
    """A masked ensemble member has no forecast on the evaluation grid."""


class NoForecastsAtIssue(SurgekitError):
    """No source issued a forecast at the requested hour."""


class TooFewSources(SurgekitError):
    """Pairwise outlier analysis needs at least three sources."""


class EmptyHistory(SurgekitError):
    """An observation history with no samples was supplied."""


# --- selection ---

class NoStartObservations(SurgekitError):
    """No observations overlap the start window of the candidates."""


class InsufficientArchive(SurgekitError):
    """The historical archive holds too few records to fit a predictor."""


class NoStartOverlap(SurgekitError):
    """Observations do not cover the first samples of the candidate."""


class NoCandidates(SurgekitError):
    """A selection rule was invoked with an empty candidate set."""


class InsufficientCandidates(SurgekitError):
    """Spread classification needs at least two candidates."""


class HistoryTooShort(SurgekitError):
    """A transition matrix needs at least two history entries."""


class UnknownState(SurgekitError):
    """The given state is not part of the fitted transition matrix."""


# --- peaks ---

class MissingSourcePeak(SurgekitError):
    """An archive record or live source lacks a peak for regression."""


class ShiftOutOfRange(SurgekitError):
    """Translating the peak would push it outside the series."""


class NoPeakInSource(SurgekitError):
    """A source forecast has no peak matching the target."""


class NoCombinedPeak(SurgekitError):
    """The combined forecast has no above-threshold peak to rescale."""


# --- expression forms ---

class UnboundVariable(SurgekitError):
    """An expression references a source that was not supplied."""
