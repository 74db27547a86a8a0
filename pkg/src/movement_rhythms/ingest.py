"""Parsing and validation of step counts, demographics, monthly surveys and
OxCGRT stringency exports.

Every parser accepts a path or an open text stream plus an optional column
map (``{canonical_field: column_in_file}``) and returns a :class:`ParseResult`
holding the accepted records and every rejected row with its line number.
Nothing is dropped silently: ``len(records) + len(rejected)`` always equals the
number of data rows read.
"""
from __future__ import annotations

import calendar
import csv
import io
import os
import urllib.request
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import IO, Callable, Iterable, Mapping
from zoneinfo import ZoneInfo

GENDERS = ("female", "male", "non_binary")
ROLES = ("academic", "service")
AGE_GROUPS = ("25-35", "36-50", "51-66")
ORIGINS = ("finland", "europe_other", "outside_europe")
STAGES = ("pre", "early", "late")

OXCGRT_URL = (
    "https://raw.githubusercontent.com/OxCGRT/covid-policy-dataset/main/"
    "data/OxCGRT_compact_national_v1.csv"
)

# free-text spellings seen in questionnaires, keyed by canonical label
_ALIASES = {
    "non-binary": "non_binary",
    "nonbinary": "non_binary",
    "non binary": "non_binary",
    "academic staff": "academic",
    "service staff": "service",
    "europe except finland": "europe_other",
    "europe (except finland)": "europe_other",
    "europe": "europe_other",
    "outside of europe": "outside_europe",
    "outside europe": "outside_europe",
    "25–35": "25-35",
    "36–50": "36-50",
    "51–66": "51-66",
}


class IngestError(ValueError):
    """Raised for unrecoverable input problems (missing columns, strict mode)."""


@dataclass(frozen=True, order=True)
class StepRecord:
    participant_id: str
    date: date
    hour: int
    steps: int


@dataclass(frozen=True)
class ParticipantProfile:
    participant_id: str
    gender: str
    role: str
    age_group: str
    origin: str
    live_alone: bool
    has_children: bool

    @property
    def migrant(self) -> bool:
        return self.origin != "finland"

    @property
    def age_code(self) -> int:
        return AGE_GROUPS.index(self.age_group)


@dataclass(frozen=True)
class SurveyResponse:
    participant_id: str
    year_month: str
    onsite_pct: float | None
    leave_days: int | None
    walking_hours: float | None = None
    nonwalking_hours: float | None = None
    stage: str | None = None


@dataclass(frozen=True)
class StringencyPoint:
    date: date
    index: float


@dataclass(frozen=True)
class RejectedRow:
    line: int
    message: str


@dataclass
class ParseResult:
    records: list
    rejected: list[RejectedRow] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def n_rows(self) -> int:
        return len(self.records) + len(self.rejected)

    @property
    def ok(self) -> bool:
        return not self.rejected

    def raise_for_rejects(self) -> None:
        if self.rejected:
            head = "; ".join(f"line {r.line}: {r.message}" for r in self.rejected[:5])
            more = len(self.rejected) - 5
            raise IngestError(head + (f" (+{more} more)" if more > 0 else ""))


class _RowError(ValueError):
    pass


Source = str | os.PathLike | IO[str]


def _read_rows(source: Source, fields: Iterable[str], optional: Iterable[str],
               schema: Mapping[str, str] | None):
    """Yield (line_number, {field: raw_value}) pairs from a delimited source."""
    schema = dict(schema or {})
    if isinstance(source, (str, os.PathLike)):
        with open(source, newline="", encoding="utf-8") as fh:
            yield from _rows_from_stream(fh, fields, optional, schema)
    else:
        yield from _rows_from_stream(source, fields, optional, schema)


def _rows_from_stream(fh, fields, optional, schema):
    text = fh.read()
    first = text.split("\n", 1)[0]
    delimiter = max(",;\t", key=first.count)
    reader = csv.reader(io.StringIO(text), delimiter=delimiter)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise IngestError("empty input: header row expected") from None
    index = {}
    for name in fields:
        col = schema.get(name, name)
        if col not in header:
            raise IngestError(f"column {col!r} (for {name}) not found in header {header}")
        index[name] = header.index(col)
    for name in optional:
        col = schema.get(name, name)
        if col in header:
            index[name] = header.index(col)
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        yield lineno, {name: (row[i].strip() if i < len(row) else "") for name, i in index.items()}


def _canonical(value: str, accepted: tuple[str, ...], what: str) -> str:
    key = value.strip().lower()
    key = _ALIASES.get(key, key).replace(" ", "_")
    if key not in accepted:
        raise _RowError(f"unknown {what} {value!r}; accepted: {', '.join(accepted)}")
    return key


def _parse_bool(value: str, what: str) -> bool:
    key = value.strip().lower()
    if key in ("true", "yes", "1", "y", "t"):
        return True
    if key in ("false", "no", "0", "n", "f"):
        return False
    raise _RowError(f"{what} must be true/false, got {value!r}")


def _parse_date(value: str) -> date:
    value = value.strip()
    try:
        if len(value) == 8 and value.isdigit():
            return datetime.strptime(value, "%Y%m%d").date()
        return date.fromisoformat(value[:10])
    except ValueError:
        raise _RowError(f"malformed date {value!r}") from None


def _parse_int(value: str, what: str) -> int:
    try:
        f = float(value)
    except ValueError:
        raise _RowError(f"malformed {what} {value!r}") from None
    if not f.is_integer():
        raise _RowError(f"{what} must be an integer, got {value!r}")
    return int(f)


def _parse_float(value: str, what: str) -> float:
    try:
        f = float(value)
    except ValueError:
        raise _RowError(f"malformed {what} {value!r}") from None
    if f != f:
        raise _RowError(f"{what} is NaN")
    return f


def _optional(value: str, parse: Callable[[str], object]):
    return None if value == "" or value.lower() in ("na", "nan", "none") else parse(value)


def _parse_year_month(value: str) -> str:
    try:
        d = datetime.strptime(value.strip()[:7], "%Y-%m")
    except ValueError:
        raise _RowError(f"malformed year_month {value!r} (expected YYYY-MM)") from None
    return d.strftime("%Y-%m")


def _collect(rows, build, key=None) -> ParseResult:
    result = ParseResult(records=[])
    seen: dict = {}
    for lineno, raw in rows:
        try:
            rec = build(raw)
        except _RowError as exc:
            result.rejected.append(RejectedRow(lineno, str(exc)))
            continue
        if key is not None:
            k = key(rec)
            if k in seen:
                result.rejected.append(RejectedRow(
                    lineno, f"duplicate key {k} (first seen on line {seen[k]}, repeated on line {lineno})"))
                continue
            seen[k] = lineno
        result.records.append(rec)
    return result


def parse_step_records(source: Source, schema: Mapping[str, str] | None = None) -> ParseResult:
    """Parse hourly step counts; columns participant_id, date, hour, steps."""

    def build(raw):
        pid = raw["participant_id"]
        if not pid:
            raise _RowError("empty participant_id")
        hour = _parse_int(raw["hour"], "hour")
        if not 0 <= hour <= 23:
            raise _RowError(f"hour {hour} outside [0, 23]")
        steps = _parse_int(raw["steps"], "steps")
        if steps < 0:
            raise _RowError(f"steps {steps} is negative")
        return StepRecord(pid, _parse_date(raw["date"]), hour, steps)

    rows = _read_rows(source, ("participant_id", "date", "hour", "steps"), (), schema)
    return _collect(rows, build, key=lambda r: (r.participant_id, r.date.isoformat(), r.hour))


def parse_demographics(source: Source, schema: Mapping[str, str] | None = None) -> ParseResult:
    fields = ("participant_id", "gender", "role", "age_group", "origin", "live_alone", "has_children")

    def build(raw):
        if not raw["participant_id"]:
            raise _RowError("empty participant_id")
        return ParticipantProfile(
            participant_id=raw["participant_id"],
            gender=_canonical(raw["gender"], GENDERS, "gender"),
            role=_canonical(raw["role"], ROLES, "role"),
            age_group=_canonical(raw["age_group"], AGE_GROUPS, "age_group"),
            origin=_canonical(raw["origin"], ORIGINS, "origin"),
            live_alone=_parse_bool(raw["live_alone"], "live_alone"),
            has_children=_parse_bool(raw["has_children"], "has_children"),
        )

    rows = _read_rows(source, fields, (), schema)
    return _collect(rows, build, key=lambda r: r.participant_id)


def parse_survey(source: Source, schema: Mapping[str, str] | None = None) -> ParseResult:
    """Parse monthly survey rows.

    Rows without a ``stage`` are monthly answers; rows tagged pre/early/late
    carry the baseline/exit questionnaire activity answers. Blank onsite_pct
    or leave_days mean the question was not answered.
    """

    def build(raw):
        if not raw["participant_id"]:
            raise _RowError("empty participant_id")
        ym = _parse_year_month(raw["year_month"])
        onsite = _optional(raw["onsite_pct"], lambda v: _parse_float(v, "onsite_pct"))
        if onsite is not None and not 0 <= onsite <= 100:
            raise _RowError(f"onsite_pct {onsite} outside [0, 100]")
        leave = _optional(raw["leave_days"], lambda v: _parse_int(v, "leave_days"))
        if leave is not None:
            y, m = map(int, ym.split("-"))
            if not 0 <= leave <= calendar.monthrange(y, m)[1]:
                raise _RowError(f"leave_days {leave} outside [0, days in {ym}]")
        hours = {}
        for name in ("walking_hours", "nonwalking_hours"):
            v = _optional(raw.get(name, ""), lambda s, n=name: _parse_float(s, n))
            if v is not None and v < 0:
                raise _RowError(f"{name} {v} is negative")
            hours[name] = v
        stage = raw.get("stage", "")
        stage = _canonical(stage, STAGES, "stage") if stage else None
        return SurveyResponse(raw["participant_id"], ym, onsite, leave,
                              hours["walking_hours"], hours["nonwalking_hours"], stage)

    rows = _read_rows(source, ("participant_id", "year_month", "onsite_pct", "leave_days"),
                      ("walking_hours", "nonwalking_hours", "stage"), schema)
    return _collect(rows, build, key=lambda r: (r.participant_id, r.year_month, r.stage or ""))


def parse_stringency(source: Source, region_filter: str = "FIN",
                     schema: Mapping[str, str] | None = None) -> ParseResult:
    """Read an OxCGRT-style export and keep the national series of one region.

    Default columns are ``Date``, ``CountryCode`` and ``StringencyIndex``; the
    2023 layout's ``StringencyIndex_Average`` is picked up automatically.
    Blank index values are skipped (the series may be sparse). When a
    ``RegionCode`` column exists only national rows (blank region) are kept.
    """
    schema = {"date": "Date", "region": "CountryCode", "index": "StringencyIndex",
              "subregion": "RegionCode", **(schema or {})}
    if isinstance(source, (str, os.PathLike)):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source.read()
    header = next(csv.reader(io.StringIO(text)), [])
    if schema["index"] not in header and "StringencyIndex_Average" in header:
        schema["index"] = "StringencyIndex_Average"
    rows = _read_rows(io.StringIO(text), ("date", "region", "index"), ("subregion",), schema)
    selected = ((ln, raw) for ln, raw in rows
                if raw["region"] == region_filter and not raw.get("subregion"))

    def build(raw):
        d = _parse_date(raw["date"])
        if raw["index"] == "":
            return StringencyPoint(d, float("nan"))
        idx = _parse_float(raw["index"], "stringency index")
        if not 0 <= idx <= 100:
            raise _RowError(f"stringency index {idx} outside [0, 100]")
        return StringencyPoint(d, idx)

    result = _collect(selected, build, key=lambda p: p.date)
    result.records = sorted((p for p in result.records if p.index == p.index), key=lambda p: p.date)
    if not result.records and not result.rejected:
        msg = f"no stringency rows for region {region_filter!r}"
        result.warnings.append(msg)
        warnings.warn(msg, stacklevel=2)
    return result


def localize_step_records(records: Iterable[StepRecord], source_tz: str,
                          study_tz: str) -> list[StepRecord]:
    """Re-express (date, hour) stamps recorded in ``source_tz`` in ``study_tz``.

    Hours that collide after conversion (DST fall-back) are summed.
    """
    if source_tz == study_tz:
        return sorted(records)
    src, dst = ZoneInfo(source_tz), ZoneInfo(study_tz)
    acc: dict = defaultdict(int)
    for r in records:
        stamp = datetime(r.date.year, r.date.month, r.date.day, r.hour, tzinfo=src)
        local = stamp.astimezone(timezone.utc).astimezone(dst)
        acc[(r.participant_id, local.date(), local.hour)] += r.steps
    return sorted(StepRecord(p, d, h, s) for (p, d, h), s in acc.items())


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, date):
        return v.isoformat()
    return str(v)


def _write(rows: Iterable[Iterable], header: list[str], dest: Source | None) -> str | None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    if dest is None:
        return buf.getvalue()
    if isinstance(dest, (str, os.PathLike)):
        Path(dest).write_text(buf.getvalue(), encoding="utf-8")
    else:
        dest.write(buf.getvalue())
    return None


def write_step_records(records: Iterable[StepRecord], dest: Source | None = None):
    return _write(((r.participant_id, r.date, r.hour, r.steps) for r in records),
                  ["participant_id", "date", "hour", "steps"], dest)


def write_demographics(profiles: Iterable[ParticipantProfile], dest: Source | None = None):
    return _write(((p.participant_id, p.gender, p.role, p.age_group, p.origin,
                    p.live_alone, p.has_children) for p in profiles),
                  ["participant_id", "gender", "role", "age_group", "origin",
                   "live_alone", "has_children"], dest)


def write_survey(responses: Iterable[SurveyResponse], dest: Source | None = None):
    return _write(((s.participant_id, s.year_month, s.onsite_pct, s.leave_days,
                    s.walking_hours, s.nonwalking_hours, s.stage) for s in responses),
                  ["participant_id", "year_month", "onsite_pct", "leave_days",
                   "walking_hours", "nonwalking_hours", "stage"], dest)


def write_stringency(points: Iterable[StringencyPoint], region: str = "FIN",
                     dest: Source | None = None):
    return _write(((p.date, region, p.index) for p in points),
                  ["Date", "CountryCode", "StringencyIndex"], dest)


def fetch_oxcgrt(dest: str | os.PathLike, url: str = OXCGRT_URL, timeout: float = 60.0) -> Path:
    """Download the public OxCGRT CSV to ``dest``. Analysis never reads from the network."""
    dest = Path(dest)
    dest.parent.mkdir(parents=True, exist_ok=True)
    with urllib.request.urlopen(url, timeout=timeout) as resp:
        payload = resp.read()
    tmp = dest.with_suffix(dest.suffix + ".part")
    tmp.write_bytes(payload)
    tmp.replace(dest)
    return dest


def month_days(year_month: str) -> list[date]:
    y, m = map(int, year_month.split("-"))
    first = date(y, m, 1)
    return [first + timedelta(days=i) for i in range(calendar.monthrange(y, m)[1])]
