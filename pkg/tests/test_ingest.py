import io
import threading
import warnings
from datetime import date
from functools import partial
from http.server import HTTPServer, SimpleHTTPRequestHandler

import pytest
from hypothesis import given, settings, strategies as st

from movement_rhythms.ingest import (AGE_GROUPS, GENDERS, ORIGINS, ROLES, STAGES, IngestError,
                                     ParticipantProfile, StepRecord, StringencyPoint, SurveyResponse,
                                     fetch_oxcgrt, localize_step_records, parse_demographics,
                                     parse_step_records, parse_stringency, parse_survey,
                                     write_demographics, write_step_records, write_stringency,
                                     write_survey)

STEP_HEADER = "participant_id,date,hour,steps\n"
DEMO_HEADER = "participant_id,gender,role,age_group,origin,live_alone,has_children\n"
SURVEY_HEADER = "participant_id,year_month,onsite_pct,leave_days,walking_hours,nonwalking_hours,stage\n"


def steps(text):
    return parse_step_records(io.StringIO(STEP_HEADER + text))


class TestSteps:
    def test_row_maps_to_record(self):
        res = steps("p1,2021-07-01,9,1200\n")
        assert res.records == [StepRecord("p1", date(2021, 7, 1), 9, 1200)]
        assert res.ok

    @pytest.mark.parametrize("row,fragment", [
        ("p1,2021-07-01,24,5", "hour 24"),
        ("p1,2021-07-01,-1,5", "hour -1"),
        ("p1,2021-13-01,3,5", "date"),
        ("p1,2021-07-01,3,-5", "negative"),
        ("p1,2021-07-01,3,1.5", "steps"),
        (",2021-07-01,3,5", "participant_id"),
    ])
    def test_row_errors_carry_line_numbers(self, row, fragment):
        res = steps("p1,2021-07-01,9,1200\n" + row + "\n")
        assert len(res.records) == 1
        assert [r.line for r in res.rejected] == [3]
        assert fragment in res.rejected[0].message

    def test_duplicate_key_names_both_rows(self):
        res = steps("p1,2021-07-01,9,1200\np1,2021-07-01,10,5\np1,2021-07-01,9,7\n")
        assert len(res.records) == 2
        msg = res.rejected[0].message
        assert "line 2" in msg and "line 4" in msg
        with pytest.raises(IngestError):
            res.raise_for_rejects()

    def test_column_map_and_delimiter(self):
        text = "who;day;h;n\np9;2021-07-02;0;3\n"
        res = parse_step_records(io.StringIO(text), {"participant_id": "who", "date": "day",
                                                     "hour": "h", "steps": "n"})
        assert res.records == [StepRecord("p9", date(2021, 7, 2), 0, 3)]

    def test_missing_column_is_an_error(self):
        with pytest.raises(IngestError, match="steps"):
            parse_step_records(io.StringIO("participant_id,date,hour\np1,2021-07-01,1\n"))

    def test_path_input(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text(STEP_HEADER + "a,2021-07-01,1,2\n")
        assert parse_step_records(p).records[0].steps == 2


class TestDemographics:
    def test_canonicalization(self):
        res = parse_demographics(io.StringIO(DEMO_HEADER + "p1,Female,Academic,25-35,Finland,TRUE,no\n"))
        prof = res.records[0]
        assert prof.gender == "female" and prof.role == "academic"
        assert prof.migrant is False and prof.live_alone is True and prof.has_children is False

    def test_unknown_label_lists_accepted(self):
        res = parse_demographics(io.StringIO(DEMO_HEADER + "p1,robot,academic,25-35,finland,true,false\n"))
        assert "female" in res.rejected[0].message and "non_binary" in res.rejected[0].message

    def test_migrant_derivation(self):
        for origin, migrant in (("finland", False), ("europe_other", True), ("outside_europe", True)):
            p = ParticipantProfile("x", "male", "service", "36-50", origin, False, False)
            assert p.migrant is migrant


class TestSurvey:
    def test_onsite_range(self):
        res = parse_survey(io.StringIO(SURVEY_HEADER + "p1,2021-08,120,0,,,\n"))
        assert res.rejected and "onsite_pct" in res.rejected[0].message

    def test_leave_days_bounded_by_month_length(self):
        ok = parse_survey(io.StringIO(SURVEY_HEADER + "p1,2021-02,50,28,,,\n"))
        bad = parse_survey(io.StringIO(SURVEY_HEADER + "p1,2021-02,50,29,,,\n"))
        assert ok.ok and not bad.ok

    def test_blank_answers_and_stage(self):
        res = parse_survey(io.StringIO(SURVEY_HEADER + "p1,2021-08,,,4.5,2,Early\n"))
        s = res.records[0]
        assert s.onsite_pct is None and s.leave_days is None and s.stage == "early"


class TestStringency:
    CSV = ("CountryName,CountryCode,RegionCode,Date,StringencyIndex\n"
           "Finland,FIN,,20210802,40.0\n"
           "Finland,FIN,,2021-08-01,37.96\n"
           "Sweden,SWE,,2021-08-01,20\n"
           "Finland,FIN,FI_X,2021-08-01,99\n"
           "Finland,FIN,,2021-08-03,\n")

    def test_filters_region_and_sorts(self):
        res = parse_stringency(io.StringIO(self.CSV), "FIN")
        assert res.records == [StringencyPoint(date(2021, 8, 1), 37.96), StringencyPoint(date(2021, 8, 2), 40.0)]

    def test_out_of_range(self):
        res = parse_stringency(io.StringIO("Date,CountryCode,StringencyIndex\n2021-08-01,FIN,101\n"))
        assert "outside [0, 100]" in res.rejected[0].message

    def test_unknown_region_warns(self):
        with warnings.catch_warnings(record=True):
            warnings.simplefilter("always")
            res = parse_stringency(io.StringIO(self.CSV), "XXX")
        assert res.records == [] and res.warnings

    def test_average_column(self):
        text = "Date,CountryCode,StringencyIndex_Average\n2021-08-01,FIN,12.5\n"
        assert parse_stringency(io.StringIO(text)).records[0].index == 12.5

    def test_filtering_is_idempotent(self):
        once = parse_stringency(io.StringIO(self.CSV), "FIN").records
        twice = parse_stringency(io.StringIO(write_stringency(once, "FIN")), "FIN").records
        assert once == twice


class TestTimezones:
    def test_same_zone_is_identity(self):
        recs = [StepRecord("a", date(2021, 7, 1), 3, 10)]
        assert localize_step_records(recs, "Europe/Helsinki", "Europe/Helsinki") == recs

    def test_utc_to_helsinki_shifts_day(self):
        recs = [StepRecord("a", date(2021, 7, 1), 22, 10)]
        assert localize_step_records(recs, "UTC", "Europe/Helsinki") == [StepRecord("a", date(2021, 7, 2), 1, 10)]

    def test_fall_back_hours_are_summed(self):
        # 00:00 and 01:00 UTC on 2021-10-31 both map to 03:xx Helsinki local time
        recs = [StepRecord("a", date(2021, 10, 31), 0, 5), StepRecord("a", date(2021, 10, 31), 1, 7)]
        out = localize_step_records(recs, "UTC", "Europe/Helsinki")
        assert out == [StepRecord("a", date(2021, 10, 31), 3, 12)]
        assert sum(r.steps for r in out) == 12


def test_fetch_from_local_server(tmp_path):
    (tmp_path / "srv").mkdir()
    (tmp_path / "srv" / "ox.csv").write_text("Date,CountryCode,StringencyIndex\n20210801,FIN,50\n")
    handler = partial(SimpleHTTPRequestHandler, directory=str(tmp_path / "srv"))
    handler.log_message = lambda *a, **k: None
    server = HTTPServer(("127.0.0.1", 0), handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        dest = fetch_oxcgrt(tmp_path / "out" / "ox.csv", url=f"http://127.0.0.1:{server.server_port}/ox.csv")
    finally:
        server.shutdown()
    assert parse_stringency(dest).records == [StringencyPoint(date(2021, 8, 1), 50.0)]
    assert not list((tmp_path / "out").glob("*.part"))


# ---------------------------------------------------------------- properties

pids = st.text("abcxyz019_-", min_size=1, max_size=6)
dates = st.dates(date(2019, 1, 1), date(2023, 12, 31))
step_records = st.builds(StepRecord, pids, dates, st.integers(0, 23), st.integers(0, 10**6))
profiles = st.builds(ParticipantProfile, pids, st.sampled_from(GENDERS), st.sampled_from(ROLES),
                     st.sampled_from(AGE_GROUPS), st.sampled_from(ORIGINS), st.booleans(), st.booleans())
finite = st.floats(0, 100, allow_nan=False)


@st.composite
def surveys(draw):
    d = draw(dates)
    return SurveyResponse(draw(pids), d.strftime("%Y-%m"), draw(st.none() | finite),
                          draw(st.none() | st.integers(0, 28)), draw(st.none() | st.floats(0, 80)),
                          draw(st.none() | st.floats(0, 80)), draw(st.none() | st.sampled_from(STAGES)))


def _unique(items, key):
    seen, out = set(), []
    for it in items:
        if key(it) not in seen:
            seen.add(key(it))
            out.append(it)
    return out


@given(st.lists(step_records, max_size=30))
def test_step_round_trip(recs):
    recs = _unique(recs, lambda r: (r.participant_id, r.date, r.hour))
    assert parse_step_records(io.StringIO(write_step_records(recs))).records == recs


@given(st.lists(profiles, max_size=20))
def test_demographics_round_trip(profs):
    profs = _unique(profs, lambda p: p.participant_id)
    assert parse_demographics(io.StringIO(write_demographics(profs))).records == profs


@given(st.lists(surveys(), max_size=20))
def test_survey_round_trip(resps):
    resps = _unique(resps, lambda s: (s.participant_id, s.year_month, s.stage))
    assert parse_survey(io.StringIO(write_survey(resps))).records == resps


@given(st.lists(st.builds(StringencyPoint, dates, finite), max_size=20))
def test_stringency_round_trip(points):
    points = sorted(_unique(points, lambda p: p.date), key=lambda p: p.date)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert parse_stringency(io.StringIO(write_stringency(points))).records == points


cells = st.sampled_from(["p1", "p2", "", "x y", "2021-07-01", "2021-02-30", "7", "24", "-3", "1e3", "abc"])


@settings(max_examples=60)
@given(st.lists(st.tuples(cells, cells, cells, cells), max_size=25))
def test_nothing_dropped_silently(rows):
    text = STEP_HEADER + "".join(",".join(r) + "\n" for r in rows)
    res = parse_step_records(io.StringIO(text))
    assert len(res.records) + len(res.rejected) == len(rows)
    demo = DEMO_HEADER + "".join(",".join(r + ("finland", "true", "false")) + "\n" for r in rows)
    res = parse_demographics(io.StringIO(demo))
    assert len(res.records) + len(res.rejected) == len(rows)
    surv = SURVEY_HEADER + "".join(",".join(r + ("", "", "")) + "\n" for r in rows)
    res = parse_survey(io.StringIO(surv))
    assert len(res.records) + len(res.rejected) == len(rows)
