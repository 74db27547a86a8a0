"""Model tables, the standard model formulas, stage/sub-population comparisons
and the stringency analyses built on top of the consistency pipeline."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
import pandas as pd

from .consistency import ConsistencyConfig, cohort_daily_series, cohort_monthly_series, compute_consistency
from .ingest import ParticipantProfile, StringencyPoint, SurveyResponse
from .lmm import (BootstrapResult, DesignMatrix, ModelFit, build_design, fit_reml, fit_summary, gvif,
                  parametric_bootstrap, parse_formula)
from .lmm.gvif import CollinearityError
from .rhythm import MonthAvailability, Segmentation, apply_month_exclusions
from .stats import StatsError, TestResult, mann_whitney_u, pearson_r, stars, wilcoxon_signed_rank

DEMOGRAPHICS = "role + gender + live_alone + has_children + migrant + age + gender:has_children"

MODEL_FORMULAS = {
    "1a": f"short_wd ~ {DEMOGRAPHICS}, group = participant",
    "1b": f"long_wd ~ {DEMOGRAPHICS}, group = participant",
    "2": f"long_we ~ {DEMOGRAPHICS}, group = participant",
    "3": f"onsite ~ long_wd + {DEMOGRAPHICS}, group = month",
    # month-grouped variants whose intercepts are compared with stringency
    "1a_month": f"short_wd ~ {DEMOGRAPHICS}, group = month",
    "1b_month": f"long_wd ~ {DEMOGRAPHICS}, group = month",
}
# on-site share is modelled as a raw fraction, consistency responses standardized
UNSTANDARDIZED_RESPONSES = {"onsite"}
MODEL_NAMES = ("1a", "1b", "2", "3", "custom")


class AnalysisError(ValueError):
    pass


def model_spec(name_or_formula: str):
    if name_or_formula in MODEL_FORMULAS:
        text = MODEL_FORMULAS[name_or_formula]
    elif "~" in name_or_formula:
        text = name_or_formula
    else:
        raise AnalysisError(f"unknown model {name_or_formula!r}; choose from {', '.join(MODEL_NAMES)} "
                            "(custom = a formula string)")
    response = text.split("~", 1)[0].strip()
    return parse_formula(text, standardize_response=response not in UNSTANDARDIZED_RESPONSES)


def profiles_frame(profiles: Iterable[ParticipantProfile]) -> pd.DataFrame:
    return pd.DataFrame([{
        "participant": p.participant_id, "gender": p.gender, "role": p.role,
        "age": p.age_code, "origin": p.origin, "migrant": p.migrant,
        "live_alone": p.live_alone, "has_children": p.has_children,
    } for p in profiles])


def build_model_table(monthly: pd.DataFrame, profiles: Iterable[ParticipantProfile],
                      surveys: Iterable[SurveyResponse] = ()) -> tuple[pd.DataFrame, list[dict]]:
    """Join monthly consistency with demographics and monthly survey answers.

    Non-binary participants are left out of the gender-coded models. Returns
    the table and an audit list.
    """
    audit: list[dict] = []
    prof = profiles_frame(profiles)
    if prof.empty:
        raise AnalysisError("no demographics")
    nb = prof[prof["gender"] == "non_binary"]["participant"].tolist()
    for pid in nb:
        audit.append({"level": "participant", "participant_id": pid, "year_month": "",
                      "rule": "non_binary", "detail": "excluded from gender-coded models"})
    prof = prof[prof["gender"] != "non_binary"]
    table = monthly.rename(columns={"participant_id": "participant"}).copy()
    table["participant"] = table["participant"].astype(str)
    table["month"] = table["year_month"].astype(str)
    missing = sorted(set(table["participant"]) - set(prof["participant"]) - set(nb))
    for pid in missing:
        audit.append({"level": "participant", "participant_id": pid, "year_month": "",
                      "rule": "no demographics", "detail": "participant absent from demographics"})
    table = table.merge(prof, on="participant", how="inner")
    monthly_answers = pd.DataFrame([{
        "participant": s.participant_id, "month": s.year_month,
        "onsite": None if s.onsite_pct is None else s.onsite_pct / 100.0, "leave_days": s.leave_days,
    } for s in surveys if s.stage is None], columns=["participant", "month", "onsite", "leave_days"])
    table = table.merge(monthly_answers, on=["participant", "month"], how="left")
    table = table.sort_values(["participant", "month"]).reset_index(drop=True)
    return table, audit


def model3_rows(table: pd.DataFrame, max_leave_days: int = 7) -> tuple[pd.DataFrame, list[dict]]:
    """Rows eligible for the on-site model: survey present and leave within limit.

    The workday/weekend availability rules were already applied when the
    monthly table was built."""
    keep, audit = [], []
    for row in table.itertuples(index=False):
        survey = None if pd.isna(row.leave_days) else SurveyResponse(row.participant, row.month, None,
                                                                     int(row.leave_days))
        d = apply_month_exclusions(MonthAvailability(10**6, 10**6), survey, for_model3=True,
                                   max_leave_days=max_leave_days)
        keep.append(d.keep)
        if not d.keep:
            audit.append({"level": "month", "participant_id": row.participant, "year_month": row.month,
                          "rule": d.rule, "detail": d.detail})
    return table[np.array(keep, dtype=bool)].reset_index(drop=True), audit


@dataclass
class ModelRun:
    name: str
    design: DesignMatrix
    fit: ModelFit
    bootstrap: BootstrapResult | None
    summary: dict


def run_model(name_or_formula: str, table: pd.DataFrame, n_boot: int = 1000, seed: int = 0,
              workers: int = 1, max_leave_days: int = 7) -> ModelRun:
    spec = model_spec(name_or_formula)
    data = table
    if spec.response == "onsite":
        data, _ = model3_rows(table, max_leave_days)
    design = build_design(spec, data)
    fit = fit_reml(design)
    boot = parametric_bootstrap(fit, design, n_boot, seed, workers) if n_boot else None
    try:
        gv = gvif(design)
    except CollinearityError:
        gv = None
    label = name_or_formula if name_or_formula in MODEL_FORMULAS else "custom"
    return ModelRun(label, design, fit, boot, fit_summary(fit, design, boot, gv, name=f"Model {label}"))


# --------------------------------------------------------------------------
# stage and sub-population comparisons

ACTIVITIES = ("walking_hours", "nonwalking_hours", "onsite_pct")
SUBPOPULATIONS = {
    "all": lambda p: True,
    "male": lambda p: p.gender == "male",
    "female": lambda p: p.gender == "female",
    "non-migrant": lambda p: not p.migrant,
    "migrant": lambda p: p.migrant,
}
CONTRASTS = (("male", "female"), ("migrant", "non-migrant"))


def _stage_values(surveys: Iterable[SurveyResponse]) -> dict[str, dict[str, dict[str, float]]]:
    """activity -> stage -> participant -> value."""
    out: dict = {a: {"pre": {}, "early": {}, "late": {}} for a in ACTIVITIES}
    for s in surveys:
        if s.stage is None:
            continue
        for a in ACTIVITIES:
            v = getattr(s, a)
            if v is not None:
                out[a][s.stage][s.participant_id] = float(v)
    return out


def compare_stages(surveys: Iterable[SurveyResponse], profiles: Iterable[ParticipantProfile]) -> pd.DataFrame:
    """Wilcoxon signed-rank comparisons of early and late stage against pre-pandemic."""
    surveys = list(surveys)
    if not any(s.stage for s in surveys):
        raise AnalysisError("survey has no stage-tagged (pre/early/late) answers")
    prof = {p.participant_id: p for p in profiles}
    values = _stage_values(surveys)
    rows = []
    for act in ACTIVITIES:
        for sub, member in SUBPOPULATIONS.items():
            ids = {pid for pid, p in prof.items() if member(p)}
            stage_vals = {st: {k: v for k, v in values[act][st].items() if k in ids} for st in ("pre", "early", "late")}
            if not stage_vals["pre"]:
                rows.append({"activity": act, "subpopulation": sub, "note": "no respondents"})
                continue
            row = {"activity": act, "subpopulation": sub, "n_pre": len(stage_vals["pre"]),
                   "mean_pre": float(np.mean(list(stage_vals["pre"].values())))}
            for st in ("early", "late"):
                paired = sorted(set(stage_vals["pre"]) & set(stage_vals[st]))
                if not paired:
                    row[f"note_{st}"] = "no paired respondents"
                    continue
                res = wilcoxon_signed_rank([stage_vals["pre"][k] for k in paired],
                                           [stage_vals[st][k] for k in paired])
                row.update({f"mean_{st}": float(np.mean(list(stage_vals[st].values()))),
                            f"n_{st}": len(paired), f"W_{st}": res.statistic, f"p_{st}": res.p_value,
                            f"method_{st}": res.method, f"stars_{st}": stars(res.p_value),
                            f"degenerate_{st}": res.degenerate})
            rows.append(row)
    return pd.DataFrame(rows)


def compare_groups(surveys: Iterable[SurveyResponse], profiles: Iterable[ParticipantProfile]) -> pd.DataFrame:
    """Mann-Whitney U comparisons between sub-populations at each stage, plus
    late vs early for the whole cohort."""
    surveys = list(surveys)
    if not any(s.stage for s in surveys):
        raise AnalysisError("survey has no stage-tagged (pre/early/late) answers")
    prof = {p.participant_id: p for p in profiles}
    values = _stage_values(surveys)
    rows = []

    def add(act, stage, label, x, y):
        if not x or not y:
            rows.append({"activity": act, "stage": stage, "contrast": label,
                         "note": "empty group, row omitted"})
            return
        res = mann_whitney_u(x, y)
        rows.append({"activity": act, "stage": stage, "contrast": label, "n_x": len(x), "n_y": len(y),
                     "mean_x": float(np.mean(x)), "mean_y": float(np.mean(y)), "U": res.statistic,
                     "U_x": res.details["u_x"], "U_y": res.details["u_y"], "p": res.p_value,
                     "method": res.method, "stars": stars(res.p_value)})

    for act in ACTIVITIES:
        for st in ("pre", "early", "late"):
            for a, b in CONTRASTS:
                xs = [v for k, v in values[act][st].items() if k in prof and SUBPOPULATIONS[a](prof[k])]
                ys = [v for k, v in values[act][st].items() if k in prof and SUBPOPULATIONS[b](prof[k])]
                add(act, st, f"{a} vs {b}", xs, ys)
        add(act, "late vs early", "all", list(values[act]["late"].values()), list(values[act]["early"].values()))
    return pd.DataFrame(rows)


# --------------------------------------------------------------------------
# stringency

def monthly_stringency(points: Iterable[StringencyPoint]) -> pd.Series:
    s = pd.Series({p.date: p.index for p in points}, dtype=float)
    if s.empty:
        return s
    s.index = pd.to_datetime(s.index)
    out = s.groupby(s.index.strftime("%Y-%m")).mean()
    return out.sort_index()


def intercept_stringency_correlation(fit: ModelFit, stringency: pd.Series) -> tuple[TestResult, pd.DataFrame]:
    """Pearson r between month random intercepts and monthly mean stringency."""
    aligned = pd.DataFrame({"intercept": pd.Series(fit.intercepts, dtype=float),
                            "stringency": stringency}).dropna()
    aligned.index.name = "year_month"
    if len(aligned) < 3:
        raise AnalysisError(f"only {len(aligned)} months overlap with the stringency series; need 3")
    try:
        res = pearson_r(aligned["intercept"].to_numpy(), aligned["stringency"].to_numpy())
    except StatsError as exc:
        raise AnalysisError(f"stringency correlation: {exc}") from None
    return res, aligned.reset_index()


def multi_segmentation_series(steps, ks=(4, 6, 8, 12), config: ConsistencyConfig = ConsistencyConfig(),
                              window: int = 7, workers: int = 1) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Cohort-mean long-term workday consistency under several segmentations.

    Returns (daily frame with rolling means per K, monthly frame per K).
    """
    daily, monthly = None, {}
    for k in ks:
        cfg = ConsistencyConfig(Segmentation.uniform(k), config.epsilon, config.min_available_fraction,
                                config.study_span, config.min_workdays, config.min_weekends)
        out = compute_consistency(steps, cfg, workers=workers)
        d = cohort_daily_series(out.records, "long", "workday", window)
        d = d.rename(columns={"mean": f"mean_k{k}", "rolling": f"rolling_k{k}"})
        daily = d if daily is None else daily.merge(d, on="date", how="outer")
        monthly[f"k{k}"] = cohort_monthly_series(out.monthly, "long_wd")
    monthly_df = pd.DataFrame(monthly)
    monthly_df.index.name = "year_month"
    return daily.sort_values("date").reset_index(drop=True), monthly_df.reset_index()
