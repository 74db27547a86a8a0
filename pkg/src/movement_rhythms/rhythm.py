"""Daily movement rhythms and their consistency.

A day's rhythm is the share of its steps falling in each of K contiguous
hour segments (night/morning/afternoon/evening by default). Consistency is the
reciprocal of the 1-D earth mover's distance between two rhythms, floored at
``epsilon`` so identical rhythms give a finite value of ``1/epsilon``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linprog

WORKDAY = "workday"
WEEKEND = "weekend"
DEFAULT_EPSILON = 1e-6
NORMALIZATION_TOL = 1e-9


class RhythmError(ValueError):
    pass


@dataclass(frozen=True)
class Segmentation:
    """Hour marks splitting the day into K contiguous segments.

    ``Segmentation((0, 6, 12, 18))`` is the default night/morning/afternoon/
    evening split; the leading 0 may be omitted.
    """

    boundaries: tuple[int, ...] = (0, 6, 12, 18)

    def __post_init__(self):
        b = tuple(int(x) for x in self.boundaries)
        if not b or b[0] != 0:
            b = (0,) + b
        if any(x >= y for x, y in zip(b, b[1:])):
            raise RhythmError(f"segment boundaries must be strictly increasing: {b}")
        if b[-1] > 23:
            raise RhythmError(f"segment boundaries must lie in [0, 23]: {b}")
        if len(b) < 2:
            raise RhythmError("at least two segments are required")
        object.__setattr__(self, "boundaries", b)

    @classmethod
    def uniform(cls, k: int) -> "Segmentation":
        if k < 2 or 24 % k:
            raise RhythmError(f"uniform segmentation needs K dividing 24, got {k}")
        return cls(tuple(range(0, 24, 24 // k)))

    @property
    def k(self) -> int:
        return len(self.boundaries)

    def segment_of(self, hour: int) -> int:
        return int(np.searchsorted(self.boundaries, hour, side="right")) - 1


DEFAULT_SEGMENTATION = Segmentation()


def day_class(d: date) -> str:
    return WEEKEND if d.weekday() >= 5 else WORKDAY


@dataclass(frozen=True)
class DayDistribution:
    participant_id: str
    date: date
    day_class: str
    proportions: tuple[float, ...]
    total_steps: float

    @property
    def year_month(self) -> str:
        return self.date.strftime("%Y-%m")


@dataclass(frozen=True)
class BaselineDistribution:
    participant_id: str
    scope: str  # "YYYY-MM" or "long_term"
    day_class: str
    proportions: tuple[float, ...]
    n_days: int


@dataclass(frozen=True)
class ConsistencyRecord:
    participant_id: str
    date: date
    kind: str  # short | monthly | long
    day_class: str
    value: float
    distance: float
    normalized_distance: float


@dataclass
class MonthlyConsistency:
    participant_id: str
    year_month: str
    short_wd: float | None = None
    short_we: float | None = None
    monthly_wd: float | None = None
    monthly_we: float | None = None
    long_wd: float | None = None
    long_we: float | None = None
    counts: dict[str, int] = field(default_factory=dict)

    MEANS = ("short_wd", "short_we", "monthly_wd", "monthly_we", "long_wd", "long_we")


@dataclass(frozen=True)
class Decision:
    keep: bool
    rule: str | None = None
    detail: str = ""


# --------------------------------------------------------------------------
# distributions

def segment_counts(hourly: np.ndarray, seg: Segmentation = DEFAULT_SEGMENTATION) -> np.ndarray:
    """Sum an (n_days, 24) hourly matrix into (n_days, K) segment counts."""
    hourly = np.asarray(hourly, dtype=float)
    return np.add.reduceat(hourly, list(seg.boundaries), axis=-1)


def segment_proportions(hourly: np.ndarray, seg: Segmentation = DEFAULT_SEGMENTATION):
    """Return (proportions, totals); rows with zero total get NaN proportions."""
    counts = segment_counts(hourly, seg)
    totals = counts.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        props = counts / totals[..., None]
    props[totals <= 0] = np.nan
    return props, totals


def build_day_distribution(records, seg: Segmentation = DEFAULT_SEGMENTATION) -> DayDistribution | None:
    """Rhythm of one participant-day from its hourly StepRecords.

    Hours without a record count as zero steps. Returns None (a missing day)
    when there are no records or the day's total is zero.
    """
    records = list(records)
    if not records:
        return None
    pid, d = records[0].participant_id, records[0].date
    hourly = np.zeros(24)
    for r in records:
        if r.participant_id != pid or r.date != d:
            raise RhythmError("records span more than one participant-day")
        hourly[r.hour] += r.steps
    props, totals = segment_proportions(hourly[None, :], seg)
    if totals[0] <= 0:
        return None
    return DayDistribution(pid, d, day_class(d), tuple(props[0].tolist()), float(totals[0]))


# --------------------------------------------------------------------------
# distances

def _check_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[-1] != b.shape[-1]:
        raise RhythmError(f"length mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    for v in (a, b):
        if np.any(v < 0) or np.any(np.abs(v.sum(axis=-1) - 1.0) > NORMALIZATION_TOL):
            raise RhythmError("inputs must be non-negative proportions summing to 1")
    return a, b


def emd_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise EMD for (..., K) arrays without validation."""
    diff = np.cumsum(a, axis=-1)[..., :-1] - np.cumsum(b, axis=-1)[..., :-1]
    return np.abs(diff).sum(axis=-1)


def emd(a: Sequence[float], b: Sequence[float]) -> float:
    """Earth mover's distance between two K-bin distributions on a line.

    Adjacent segments are one unit apart, so the distance is the summed
    absolute difference of the two cumulative distributions over the first
    K-1 bins. The result lies in [0, K-1].
    """
    a, b = _check_pair(a, b)
    return float(emd_rows(a, b))


def unit_ground_distance(k: int) -> np.ndarray:
    idx = np.arange(k)
    return np.abs(idx[:, None] - idx[None, :]).astype(float)


def emd_lp_oracle(a: Sequence[float], b: Sequence[float], ground: np.ndarray | None = None) -> float:
    """Minimum-cost transport between ``a`` and ``b`` solved as a linear program.

    Independent check for :func:`emd`; any non-negative K x K ground distance
    may be supplied (unit spacing by default).
    """
    a, b = _check_pair(a, b)
    k = a.size
    ground = unit_ground_distance(k) if ground is None else np.asarray(ground, dtype=float)
    if ground.shape != (k, k) or np.any(ground < 0):
        raise RhythmError("ground distance must be a non-negative K x K matrix")
    b = b * (a.sum() / b.sum())
    rows = np.kron(np.eye(k), np.ones((1, k)))  # sum_j f_ij = a_i
    cols = np.kron(np.ones((1, k)), np.eye(k))  # sum_i f_ij = b_j
    res = linprog(ground.ravel(), A_eq=np.vstack([rows, cols[:-1]]),
                  b_eq=np.concatenate([a, b[:-1]]), bounds=(0, None), method="highs-ds")
    if not res.success:
        raise RhythmError(f"transport LP failed: {res.message}")
    return max(float(res.fun), 0.0)


def consistency_value(distance: float, epsilon: float = DEFAULT_EPSILON) -> float:
    return 1.0 / max(distance, epsilon)


def short_term_consistency(d_t: DayDistribution, d_next: DayDistribution,
                           epsilon: float = DEFAULT_EPSILON) -> float:
    if d_t.participant_id != d_next.participant_id:
        raise RhythmError("short-term consistency compares days of one participant")
    if d_next.date - d_t.date != timedelta(days=1):
        raise RhythmError(f"{d_t.date} and {d_next.date} are not consecutive days")
    return consistency_value(emd(d_t.proportions, d_next.proportions), epsilon)


def _mean_rows(rows: np.ndarray) -> np.ndarray:
    # fsum keeps the mean independent of row order
    n = rows.shape[0]
    return np.array([math.fsum(rows[:, j]) / n for j in range(rows.shape[1])])


def baseline(distributions: Iterable[DayDistribution], scope: str = "long_term",
             cls: str | None = None) -> BaselineDistribution:
    """Per-segment mean rhythm over a set of days of one participant and day class."""
    dists = list(distributions)
    if not dists:
        raise RhythmError("baseline of an empty set")
    pids = {d.participant_id for d in dists}
    classes = {d.day_class for d in dists}
    if len(pids) > 1 or len(classes) > 1:
        raise RhythmError("baseline inputs must share participant and day class")
    if cls is not None and classes != {cls}:
        raise RhythmError(f"baseline requested for {cls} but days are {classes.pop()}")
    if scope != "long_term" and any(d.year_month != scope for d in dists):
        raise RhythmError(f"days outside month {scope}")
    mean = _mean_rows(np.array([d.proportions for d in dists]))
    return BaselineDistribution(pids.pop(), scope, classes.pop(), tuple(mean.tolist()), len(dists))


def _baseline_consistency(d_t, base, epsilon):
    if d_t.participant_id != base.participant_id:
        raise RhythmError("baseline belongs to another participant")
    if d_t.day_class != base.day_class:
        raise RhythmError(f"day class {d_t.day_class} does not match baseline {base.day_class}")
    return consistency_value(emd(d_t.proportions, base.proportions), epsilon)


def monthly_consistency(d_t: DayDistribution, monthly_baseline: BaselineDistribution,
                        epsilon: float = DEFAULT_EPSILON) -> float:
    if monthly_baseline.scope != d_t.year_month:
        raise RhythmError(f"baseline scope {monthly_baseline.scope} is not the month of {d_t.date}")
    return _baseline_consistency(d_t, monthly_baseline, epsilon)


def long_term_consistency(d_t: DayDistribution, long_baseline: BaselineDistribution,
                          epsilon: float = DEFAULT_EPSILON) -> float:
    if long_baseline.scope != "long_term":
        raise RhythmError("long-term consistency needs a long_term baseline")
    return _baseline_consistency(d_t, long_baseline, epsilon)


# --------------------------------------------------------------------------
# monthly means and exclusion rules

def _mean(values: list[float]) -> float | None:
    return math.fsum(values) / len(values) if values else None


def monthly_aggregate(records: Iterable[ConsistencyRecord]) -> MonthlyConsistency:
    """Workday/weekend means of one participant-month's consistency values.

    Short-term workday means use Mon-Thu anchors only (a Friday's next day is
    a Saturday); short-term weekend means use Saturday anchors (Sat -> Sun).
    Monthly and long-term means use every workday / weekend day.
    """
    records = list(records)
    if not records:
        raise RhythmError("no records to aggregate")
    pid = records[0].participant_id
    first = records[0].date
    ym = first.strftime("%Y-%m")
    buckets: dict[str, list[float]] = {m: [] for m in MonthlyConsistency.MEANS}
    for r in records:
        if r.participant_id != pid or r.date.month != first.month or r.date.year != first.year:
            raise RhythmError("records span more than one participant-month")
        wd = r.date.weekday()
        if r.kind == "short":
            if wd <= 3:
                buckets["short_wd"].append(r.value)
            elif wd == 5:
                buckets["short_we"].append(r.value)
        elif r.kind in ("monthly", "long"):
            buckets[f"{r.kind}_{'we' if wd >= 5 else 'wd'}"].append(r.value)
        else:
            raise RhythmError(f"unknown consistency kind {r.kind!r}")
    out = MonthlyConsistency(pid, ym)
    for name, vals in buckets.items():
        setattr(out, name, _mean(vals))
        out.counts[name] = len(vals)
    return out


def apply_participant_exclusion(available_days: int, span_days: int,
                                min_fraction: float = 0.20) -> Decision:
    """Drop a participant with less than ``min_fraction`` of span days observed."""
    if span_days <= 0:
        return Decision(False, "availability", "empty span")
    if Fraction(available_days, span_days) < Fraction(str(min_fraction)):
        return Decision(False, "availability",
                        f"{available_days}/{span_days} days observed, below {min_fraction:.0%}")
    return Decision(True)


@dataclass(frozen=True)
class MonthAvailability:
    workdays: int
    full_weekends: int


def month_availability(dates: Iterable[date], year_month: str) -> MonthAvailability:
    """Observed workdays in the month and Saturdays (in the month) whose Sunday is also observed."""
    observed = dates if isinstance(dates, (set, frozenset)) else set(dates)
    y, m = map(int, year_month.split("-"))
    in_month = [d for d in observed if d.month == m and d.year == y]
    workdays = sum(1 for d in in_month if d.weekday() < 5)
    weekends = sum(1 for d in in_month if d.weekday() == 5 and d + timedelta(days=1) in observed)
    return MonthAvailability(workdays, weekends)


def apply_month_exclusions(availability: MonthAvailability, survey=None, for_model3: bool = False,
                           min_workdays: int = 5, min_weekends: int = 2,
                           max_leave_days: int = 7) -> Decision:
    if availability.workdays < min_workdays:
        return Decision(False, "min_workdays",
                        f"{availability.workdays} workdays observed, need {min_workdays}")
    if availability.full_weekends < min_weekends:
        return Decision(False, "min_weekends",
                        f"{availability.full_weekends} full weekends observed, need {min_weekends}")
    if for_model3:
        if survey is None or survey.leave_days is None:
            return Decision(False, "no survey", "leave days not reported")
        if survey.leave_days > max_leave_days:
            return Decision(False, "max_leave_days",
                            f"{survey.leave_days} leave days, allowed {max_leave_days}")
    return Decision(True)
