"""Cohort pipeline: step table -> daily rhythms -> consistency records ->
monthly workday/weekend means, with an audit of every exclusion."""
from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable

import numpy as np
import pandas as pd

from .ingest import StepRecord
from .rhythm import (DEFAULT_EPSILON, DEFAULT_SEGMENTATION, WEEKEND, WORKDAY, ConsistencyRecord,
                     MonthlyConsistency, Segmentation, apply_month_exclusions,
                     apply_participant_exclusion, emd_rows, month_availability, monthly_aggregate,
                     segment_proportions, _mean_rows)
from .stats import rolling_mean


class EmptyDatasetError(RuntimeError):
    pass


@dataclass(frozen=True)
class ConsistencyConfig:
    segmentation: Segmentation = DEFAULT_SEGMENTATION
    epsilon: float = DEFAULT_EPSILON
    min_available_fraction: float = 0.20
    study_span: tuple[date, date] | None = None
    min_workdays: int = 5
    min_weekends: int = 2


@dataclass(frozen=True)
class AuditEntry:
    level: str  # participant | month
    participant_id: str
    year_month: str
    rule: str
    detail: str


@dataclass
class ConsistencyOutput:
    records: list[ConsistencyRecord] = field(default_factory=list)
    monthly: list[MonthlyConsistency] = field(default_factory=list)
    audit: list[AuditEntry] = field(default_factory=list)
    kept_participants: list[str] = field(default_factory=list)

    def monthly_frame(self) -> pd.DataFrame:
        return monthly_to_frame(self.monthly)

    def records_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.__dict__ for r in self.records])


def steps_frame(records: Iterable[StepRecord]) -> pd.DataFrame:
    rows = [(r.participant_id, r.date, r.hour, r.steps) for r in records]
    return pd.DataFrame(rows, columns=["participant_id", "date", "hour", "steps"])


def hourly_by_participant(steps: pd.DataFrame):
    """Yield (participant_id, day array (datetime64[D]), hourly (n_days, 24))."""
    df = steps[["participant_id", "date", "hour", "steps"]]
    days_all = pd.to_datetime(df["date"]).to_numpy().astype("datetime64[D]")
    pids = df["participant_id"].astype(str).to_numpy()
    hours = df["hour"].to_numpy(dtype=int)
    values = df["steps"].to_numpy(dtype=float)
    order = np.argsort(pids, kind="stable")
    pids, days_all, hours, values = pids[order], days_all[order], hours[order], values[order]
    uniq, starts = np.unique(pids, return_index=True)
    bounds = list(starts) + [pids.size]
    for k, pid in enumerate(uniq):
        sl = slice(bounds[k], bounds[k + 1])
        days, inv = np.unique(days_all[sl], return_inverse=True)
        hourly = np.zeros((days.size, 24))
        np.add.at(hourly, (inv, hours[sl]), values[sl])
        yield str(pid), days, hourly


def _weekday(days: np.ndarray) -> np.ndarray:
    return (days.astype(np.int64) + 3) % 7  # 1970-01-01 was a Thursday


def participant_consistency(pid: str, days: np.ndarray, hourly: np.ndarray,
                            config: ConsistencyConfig = ConsistencyConfig()):
    """All consistency records, kept monthly means and audit rows of one participant."""
    seg, eps = config.segmentation, config.epsilon
    props, totals = segment_proportions(hourly, seg)
    valid = totals > 0
    days, props = days[valid], props[valid]
    audit: list[AuditEntry] = []
    if days.size == 0:
        return [], [], [AuditEntry("participant", pid, "", "availability", "no step data")]
    if config.study_span is not None:
        start, end = (np.datetime64(d, "D") for d in config.study_span)
        span = int((end - start).astype(int)) + 1
        available = int(((days >= start) & (days <= end)).sum())
    else:
        span = int((days[-1] - days[0]).astype(int)) + 1
        available = days.size
    decision = apply_participant_exclusion(available, span, config.min_available_fraction)
    if not decision.keep:
        return [], [], [AuditEntry("participant", pid, "", decision.rule, decision.detail)]

    k = seg.k
    weekday = _weekday(days)
    classes = np.where(weekday >= 5, WEEKEND, WORKDAY)
    months = days.astype("datetime64[M]")
    pydates = days.astype(object)

    def make(kind, idx, dist):
        vals = 1.0 / np.maximum(dist, eps)
        norm = dist / (k - 1)
        return [ConsistencyRecord(pid, pydates[i], kind, classes[i], float(v), float(d), float(nd))
                for i, v, d, nd in zip(idx, vals, dist, norm)]

    records: list[ConsistencyRecord] = []
    consecutive = np.nonzero(np.diff(days).astype(int) == 1)[0]
    records += make("short", consecutive, emd_rows(props[consecutive], props[consecutive + 1]))

    monthly_dist = np.empty(days.size)
    for m in np.unique(months):
        for cls in (WORKDAY, WEEKEND):
            sel = np.nonzero((months == m) & (classes == cls))[0]
            if sel.size:
                base = _mean_rows(props[sel])
                monthly_dist[sel] = emd_rows(props[sel], base[None, :])
    records += make("monthly", np.arange(days.size), monthly_dist)

    long_dist = np.empty(days.size)
    for cls in (WORKDAY, WEEKEND):
        sel = np.nonzero(classes == cls)[0]
        if sel.size:
            long_dist[sel] = emd_rows(props[sel], _mean_rows(props[sel])[None, :])
    records += make("long", np.arange(days.size), long_dist)
    records.sort(key=lambda r: (r.date, ("short", "monthly", "long").index(r.kind)))

    by_month: dict[str, list[ConsistencyRecord]] = {}
    for r in records:
        by_month.setdefault(f"{r.date.year:04d}-{r.date.month:02d}", []).append(r)
    observed = set(pydates)
    monthly: list[MonthlyConsistency] = []
    for ym, recs in sorted(by_month.items()):
        decision = apply_month_exclusions(month_availability(observed, ym),
                                          min_workdays=config.min_workdays,
                                          min_weekends=config.min_weekends)
        if decision.keep:
            monthly.append(monthly_aggregate(recs))
        else:
            audit.append(AuditEntry("month", pid, ym, decision.rule, decision.detail))
    return records, monthly, audit


def _chunk_worker(payload):
    items, config = payload
    return [participant_consistency(pid, days, hourly, config) for pid, days, hourly in items]


def compute_consistency(steps, config: ConsistencyConfig = ConsistencyConfig(), workers: int = 1,
                        require_nonempty: bool = True) -> ConsistencyOutput:
    """Run the full rhythm pipeline over a step table (DataFrame or StepRecords)."""
    if not isinstance(steps, pd.DataFrame):
        steps = steps_frame(steps)
    items = list(hourly_by_participant(steps))
    if workers > 1 and len(items) > 1:
        chunks = [items[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_chunk_worker, [(c, config) for c in chunks]))
        by_pid = {it[0]: res for chunk, part in zip(chunks, parts) for it, res in zip(chunk, part)}
        results = [(pid, by_pid[pid]) for pid, _, _ in items]
    else:
        results = [(pid, participant_consistency(pid, days, hourly, config)) for pid, days, hourly in items]
    out = ConsistencyOutput()
    for pid, (records, monthly, audit) in results:
        out.records += records
        out.monthly += monthly
        out.audit += audit
        if records:
            out.kept_participants.append(pid)
    if require_nonempty and not out.monthly:
        raise EmptyDatasetError("empty dataset: no participant-month survived the exclusion rules")
    return out


# --------------------------------------------------------------------------
# tables and files

MONTHLY_COLUMNS = ["participant_id", "year_month", *MonthlyConsistency.MEANS,
                   *[f"n_{m}" for m in MonthlyConsistency.MEANS]]
RECORD_COLUMNS = ["participant_id", "date", "kind", "day_class", "value", "distance", "normalized_distance"]
AUDIT_COLUMNS = ["level", "participant_id", "year_month", "rule", "detail"]


def monthly_to_frame(monthly: Iterable[MonthlyConsistency]) -> pd.DataFrame:
    rows = []
    for m in monthly:
        row = {"participant_id": m.participant_id, "year_month": m.year_month}
        for name in MonthlyConsistency.MEANS:
            row[name] = np.nan if getattr(m, name) is None else getattr(m, name)
            row[f"n_{name}"] = m.counts.get(name, 0)
        rows.append(row)
    return pd.DataFrame(rows, columns=MONTHLY_COLUMNS)


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if v != v else repr(v)
    if isinstance(v, date):
        return v.isoformat()
    return str(v)


def _write_csv(header, rows, dest) -> str | None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    if dest is None:
        return buf.getvalue()
    Path(dest).write_text(buf.getvalue(), encoding="utf-8")
    return None


def write_records(records: Iterable[ConsistencyRecord], dest: str | os.PathLike | None = None):
    return _write_csv(RECORD_COLUMNS, ([getattr(r, c) for c in RECORD_COLUMNS] for r in records), dest)


def write_monthly(monthly: Iterable[MonthlyConsistency], dest: str | os.PathLike | None = None):
    def row(m):
        return ([m.participant_id, m.year_month] + [getattr(m, n) for n in MonthlyConsistency.MEANS]
                + [m.counts.get(n, 0) for n in MonthlyConsistency.MEANS])
    return _write_csv(MONTHLY_COLUMNS, (row(m) for m in monthly), dest)


def write_audit(audit: Iterable[AuditEntry], dest: str | os.PathLike | None = None):
    return _write_csv(AUDIT_COLUMNS, ([getattr(a, c) for c in AUDIT_COLUMNS] for a in audit), dest)


def read_monthly(path: str | os.PathLike) -> pd.DataFrame:
    return pd.read_csv(path, dtype={"participant_id": str, "year_month": str})


# --------------------------------------------------------------------------
# cohort series

def cohort_daily_series(records: Iterable[ConsistencyRecord], kind: str = "long",
                        cls: str = WORKDAY, window: int = 7) -> pd.DataFrame:
    """Cohort-mean consistency per calendar day and its trailing rolling mean."""
    vals: dict[date, list[float]] = {}
    for r in records:
        if r.kind == kind and r.day_class == cls:
            vals.setdefault(r.date, []).append(r.value)
    if not vals:
        return pd.DataFrame(columns=["date", "mean", "rolling"])
    index = pd.date_range(min(vals), max(vals), freq="D")
    mean = np.array([np.mean(vals[d.date()]) if d.date() in vals else np.nan for d in index])
    if cls == WORKDAY:
        keep = index.dayofweek < 5
    else:
        keep = index.dayofweek >= 5
    # roll over the days of this class only so weekends do not punch holes
    series = mean[keep]
    return pd.DataFrame({"date": index[keep].date, "mean": series, "rolling": rolling_mean(series, window)})


def cohort_monthly_series(monthly: Iterable[MonthlyConsistency], column: str = "long_wd") -> pd.Series:
    frame = monthly_to_frame(monthly)
    return frame.groupby("year_month")[column].mean().sort_index()
