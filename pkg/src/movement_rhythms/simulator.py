"""Synthetic cohorts with planted effects.

Generative model, per participant ``p`` and observed day ``d`` of class ``c``:

* personal hourly archetype ``a_pc ~ Dirichlet(archetype_jitter * A_role,c)``
* log concentration ``log k_pd = log k0_c + s * (z_p - live_alone_deficit * live_alone
  - migrant_deficit * migrant) - stringency_consistency_effect * zs(month)``
  with ``z_p ~ N(0, 1)`` and ``s = concentration_sd``; deficits are therefore
  in units of the within-group standard deviation of the latent log
  concentration
* hourly proportions ``q ~ Dirichlet(k_pd * a_pc)`` (so segment shares are
  Dirichlet too), daily total ``T ~ LogNormal``, hourly counts
  ``~ Multinomial(T, q)``; zero hours are left out of the export
* on-site % = clip(intercept + slope * zs(realized monthly long-term workday
  consistency) + stringency_slope * zs(month stringency) + demographic shifts
  + noise, 0, 100)

All randomness comes from numpy's PCG64 seeded through ``SeedSequence(seed)``
with one spawned stream per participant, so outputs are bit-identical for a
given seed.
"""
from __future__ import annotations

import calendar
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from datetime import date, timedelta
from pathlib import Path

import numpy as np
import pandas as pd

from .consistency import ConsistencyConfig, participant_consistency
from .ingest import (AGE_GROUPS, GENDERS, ORIGINS, ROLES, ParticipantProfile, StringencyPoint,
                     SurveyResponse, write_demographics, write_stringency, write_survey)
from .rhythm import Segmentation


class SimulationError(ValueError):
    pass


def _normalize(w) -> tuple[float, ...]:
    w = np.asarray(w, dtype=float)
    return tuple((w / w.sum()).tolist())


# hourly step-share archetypes (index = hour of day)
_WORKDAY = {
    "academic": _normalize([.2, .1, .1, .1, .1, .2, .8, 3, 6, 5, 4, 4, 6, 5, 4, 4, 6, 7, 6, 5, 4, 3, 1.5, .6]),
    "service": _normalize([.2, .1, .1, .1, .2, .6, 3, 6, 6, 4, 4, 4, 6, 5, 5, 6, 6, 5, 5, 4, 3, 2, 1, .4]),
}
_WEEKEND = {
    "academic": _normalize([.6, .4, .2, .1, .1, .1, .3, .8, 2, 4, 6, 7, 7, 7, 7, 6, 6, 5, 5, 4, 3, 2, 1.5, 1]),
    "service": _normalize([.5, .3, .2, .1, .1, .2, .5, 1.5, 3, 5, 6, 7, 7, 6, 6, 6, 5, 5, 4, 4, 3, 2, 1, .8]),
}

STAGE_ACTIVITY = {
    "walking_hours": {"pre": 5.3, "early": 4.8, "late": 6.0},
    "nonwalking_hours": {"pre": 3.6, "early": 2.6, "late": 2.7},
    "onsite_pct": {"pre": 83.6, "early": 9.9, "late": 32.6},
}


@dataclass
class CohortConfig:
    n_participants: int = 100
    start: date = date(2021, 7, 1)
    end: date = date(2022, 6, 30)
    gender_probs: dict = field(default_factory=lambda: {"female": 0.66, "male": 0.33, "non_binary": 0.01})
    role_probs: dict = field(default_factory=lambda: {"academic": 0.44, "service": 0.56})
    age_probs: dict = field(default_factory=lambda: {"25-35": 0.465, "36-50": 0.37, "51-66": 0.165})
    origin_probs: dict = field(default_factory=lambda: {"finland": 0.71, "europe_other": 0.12,
                                                        "outside_europe": 0.17})
    live_alone_prob: float = 0.3
    has_children_prob: float = 0.4
    workday_archetypes: dict = field(default_factory=lambda: dict(_WORKDAY))
    weekend_archetypes: dict = field(default_factory=lambda: dict(_WEEKEND))
    archetype_jitter: float = 300.0
    workday_concentration: float = 40.0
    weekend_concentration: float = 20.0
    concentration_sd: float = 0.35
    concentration_overrides: dict = field(default_factory=dict)  # participant_id -> k (inf allowed)
    live_alone_deficit: float = 1.0
    migrant_deficit: float = 1.0
    stringency_consistency_effect: float = 0.15
    missing_day_prob: float = 0.08
    dropout_hazard: float = 0.0005
    join_spread_days: int = 10
    daily_steps_median: float = 7000.0
    daily_steps_log_sd: float = 0.45
    stringency_monthly: tuple | None = None
    stringency_walk_sd: float = 12.0
    onsite_intercept: float = 35.0
    onsite_consistency_slope: float = 8.0  # % points per sd of realized long-term workday consistency
    onsite_stringency_slope: float = -10.0  # % points per sd of month stringency
    onsite_male_shift: float = 5.0
    onsite_service_shift: float = -5.0
    onsite_noise_sd: float = 10.0
    leave_days_mean: float = 1.5
    survey_response_prob: float = 0.95
    stage_activity: dict = field(default_factory=lambda: {k: dict(v) for k, v in STAGE_ACTIVITY.items()})
    activity_participant_sd: float = 0.4
    activity_noise_sd: float = 0.3
    seed: int = 0

    def validate(self) -> None:
        for name in ("gender_probs", "role_probs", "age_probs", "origin_probs"):
            probs = getattr(self, name)
            if any(not 0 <= v <= 1 for v in probs.values()) or not math.isclose(sum(probs.values()), 1.0,
                                                                                abs_tol=1e-9):
                raise SimulationError(f"{name} must be probabilities summing to 1")
        for name, labels in (("gender_probs", GENDERS), ("role_probs", ROLES), ("age_probs", AGE_GROUPS),
                             ("origin_probs", ORIGINS)):
            if set(getattr(self, name)) - set(labels):
                raise SimulationError(f"{name} has unknown categories")
        for name in ("live_alone_prob", "has_children_prob", "missing_day_prob", "dropout_hazard",
                     "survey_response_prob"):
            if not 0 <= getattr(self, name) <= 1:
                raise SimulationError(f"{name} must lie in [0, 1]")
        for arche in (self.workday_archetypes, self.weekend_archetypes):
            for role in ROLES:
                a = np.asarray(arche[role], dtype=float)
                if a.shape != (24,) or np.any(a <= 0) or abs(a.sum() - 1) > 1e-9:
                    raise SimulationError("archetypes must be positive 24-hour vectors summing to 1")
        for k in (self.workday_concentration, self.weekend_concentration, self.archetype_jitter):
            if not k > 0:
                raise SimulationError("concentrations must be positive")
        if math.isinf(self.workday_concentration) or math.isinf(self.weekend_concentration):
            if self.concentration_sd > 0:
                raise SimulationError("zero dispersion (infinite concentration) cannot carry "
                                      "between-participant variance; set concentration_sd = 0")
        if any(not k > 0 for k in self.concentration_overrides.values()):
            raise SimulationError("concentration overrides must be positive")
        if self.concentration_sd < 0 or self.end < self.start:
            raise SimulationError("invalid spread or study span")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["start"], d["end"] = self.start.isoformat(), self.end.isoformat()
        d["concentration_overrides"] = {k: (str(v) if math.isinf(v) else v)
                                        for k, v in self.concentration_overrides.items()}
        d["workday_concentration"] = _jsonable(self.workday_concentration)
        d["weekend_concentration"] = _jsonable(self.weekend_concentration)
        return d


def _from_jsonable(x):
    return float(x) if isinstance(x, str) and x in ("inf", "Infinity") else x


def cohort_config_from_dict(d: dict) -> CohortConfig:
    known = {f.name for f in fields(CohortConfig)}
    unknown = set(d) - known
    if unknown:
        raise SimulationError(f"unknown simulator settings: {', '.join(sorted(unknown))}")
    d = dict(d)
    for key in ("start", "end"):
        if isinstance(d.get(key), str):
            d[key] = date.fromisoformat(d[key])
    for key in ("workday_concentration", "weekend_concentration"):
        if key in d:
            d[key] = _from_jsonable(d[key])
    if "concentration_overrides" in d:
        d["concentration_overrides"] = {k: float(_from_jsonable(v)) for k, v in d["concentration_overrides"].items()}
    if d.get("stringency_monthly") is not None:
        d["stringency_monthly"] = tuple(d["stringency_monthly"])
    for key in ("workday_archetypes", "weekend_archetypes"):
        if key in d:
            d[key] = {role: tuple(v) for role, v in d[key].items()}
    return CohortConfig(**d)


def _jsonable(x):
    return str(x) if isinstance(x, float) and math.isinf(x) else x


@dataclass
class SimulatedCohort:
    steps: pd.DataFrame
    profiles: list[ParticipantProfile]
    surveys: list[SurveyResponse]
    stringency: list[StringencyPoint]
    ground_truth: dict

    def write(self, directory: str | os.PathLike) -> dict[str, Path]:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        paths = {name: out / fn for name, fn in (
            ("steps", "steps.csv"), ("demographics", "demographics.csv"), ("survey", "survey.csv"),
            ("stringency", "stringency.csv"), ("ground_truth", "ground_truth.json"))}
        steps = self.steps.copy()
        steps["date"] = steps["date"].map(date.isoformat)
        steps.to_csv(paths["steps"], index=False, lineterminator="\n")
        write_demographics(self.profiles, paths["demographics"])
        write_survey(self.surveys, paths["survey"])
        write_stringency(self.stringency, "FIN", paths["stringency"])
        paths["ground_truth"].write_text(json.dumps(self.ground_truth, indent=2, sort_keys=True) + "\n")
        return paths


def _months(start: date, end: date) -> list[str]:
    out, y, m = [], start.year, start.month
    while (y, m) <= (end.year, end.month):
        out.append(f"{y:04d}-{m:02d}")
        y, m = (y + 1, 1) if m == 12 else (y, m + 1)
    return out


def _choice(rng, probs: dict) -> str:
    labels = list(probs)
    return labels[int(rng.choice(len(labels), p=np.array([probs[k] for k in labels])))]


def _stringency_levels(cfg: CohortConfig, months: list[str], rng) -> np.ndarray:
    if cfg.stringency_monthly is not None:
        levels = np.asarray(cfg.stringency_monthly, dtype=float)
        if levels.size != len(months):
            raise SimulationError(f"stringency_monthly needs {len(months)} values")
        return levels
    steps = rng.normal(0.0, cfg.stringency_walk_sd, len(months))
    return np.clip(45.0 + np.cumsum(steps) - steps[0], 5.0, 95.0)


def _zs(v: np.ndarray) -> np.ndarray:
    sd = v.std()
    return (v - v.mean()) / sd if sd > 0 else np.zeros_like(v)


def _largest_remainder(total: int, p: np.ndarray) -> np.ndarray:
    raw = p * total
    base = np.floor(raw)
    short = int(total - base.sum())
    base[np.argsort(-(raw - base), kind="stable")[:short]] += 1
    return base


def _simulate_days(rng, cfg, days, weekday, month_z, arche, log_k, k_override):
    """Hourly counts (n_days, 24) for one participant's observed days."""
    n = days.size
    counts = np.zeros((n, 24))
    weekend = weekday >= 5
    totals = np.maximum(1, np.rint(np.exp(rng.normal(np.log(cfg.daily_steps_median), cfg.daily_steps_log_sd,
                                                     n))).astype(np.int64))
    for cls_mask, cls in ((~weekend, "workday"), (weekend, "weekend")):
        idx = np.nonzero(cls_mask)[0]
        if not idx.size:
            continue
        a = arche[cls]
        k = k_override if k_override is not None else np.exp(log_k[cls] - cfg.stringency_consistency_effect
                                                              * month_z[idx])
        if np.isinf(k).all() if np.ndim(k) else math.isinf(k):
            fixed = _largest_remainder(int(round(cfg.daily_steps_median)), a)
            counts[idx] = fixed
            continue
        alpha = np.maximum(np.multiply.outer(np.broadcast_to(k, idx.shape), a), 1e-3)
        g = rng.standard_gamma(alpha)
        s = g.sum(axis=1, keepdims=True)
        q = np.where(s > 0, g / np.where(s > 0, s, 1), a)
        counts[idx] = rng.multinomial(totals[idx], q)
    return counts


def simulate_cohort(config: CohortConfig | None = None) -> SimulatedCohort:
    cfg = config or CohortConfig()
    cfg.validate()
    root = np.random.SeedSequence(cfg.seed)
    global_rng = np.random.default_rng(root.spawn(1)[0])
    months = _months(cfg.start, cfg.end)
    s_levels = _stringency_levels(cfg, months, global_rng)
    s_z = dict(zip(months, _zs(s_levels)))

    n_days = (cfg.end - cfg.start).days + 1
    all_days = np.arange(np.datetime64(cfg.start, "D"), np.datetime64(cfg.start, "D") + n_days)
    all_month = np.array([str(m) for m in all_days.astype("datetime64[M]")])
    all_wd = (all_days.astype(np.int64) + 3) % 7
    month_z_all = np.array([s_z[m] for m in all_month])

    profiles, step_frames, per_participant = [], [], []
    seg = Segmentation()
    for p in range(cfg.n_participants):
        pid = f"p{p + 1:03d}"
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(1, p)))
        prof = ParticipantProfile(
            participant_id=pid, gender=_choice(rng, cfg.gender_probs), role=_choice(rng, cfg.role_probs),
            age_group=_choice(rng, cfg.age_probs), origin=_choice(rng, cfg.origin_probs),
            live_alone=bool(rng.random() < cfg.live_alone_prob),
            has_children=bool(rng.random() < cfg.has_children_prob))
        profiles.append(prof)
        z = rng.standard_normal()
        latent = z - cfg.live_alone_deficit * prof.live_alone - cfg.migrant_deficit * prof.migrant
        log_k = {"workday": math.log(cfg.workday_concentration) + cfg.concentration_sd * latent
                 if math.isfinite(cfg.workday_concentration) else math.inf,
                 "weekend": math.log(cfg.weekend_concentration) + cfg.concentration_sd * latent
                 if math.isfinite(cfg.weekend_concentration) else math.inf}
        arche = {"workday": rng.dirichlet(cfg.archetype_jitter * np.asarray(cfg.workday_archetypes[prof.role])),
                 "weekend": rng.dirichlet(cfg.archetype_jitter * np.asarray(cfg.weekend_archetypes[prof.role]))}
        override = cfg.concentration_overrides.get(pid)
        if override is not None and math.isinf(override):
            arche = {c: np.asarray((cfg.workday_archetypes if c == "workday" else cfg.weekend_archetypes)[prof.role])
                     for c in arche}

        join = int(rng.integers(0, cfg.join_spread_days + 1))
        stay = int(rng.geometric(cfg.dropout_hazard)) if cfg.dropout_hazard > 0 else n_days
        last = min(n_days, join + stay)
        enrolled = np.arange(join, last)
        observed = enrolled[rng.random(enrolled.size) >= cfg.missing_day_prob]
        counts = _simulate_days(rng, cfg, all_days[observed], all_wd[observed], month_z_all[observed],
                                arche, log_k, override)
        nz_day, nz_hour = np.nonzero(counts)
        step_frames.append(pd.DataFrame({
            "participant_id": pid,
            "date": all_days[observed][nz_day].astype(object),
            "hour": nz_hour.astype(int),
            "steps": counts[nz_day, nz_hour].astype(np.int64),
        }))
        per_participant.append((pid, prof, z, enrolled, rng, all_days[observed], counts))

    # realized monthly long-term workday consistency drives on-site attendance
    realized: dict[tuple[str, str], float] = {}
    for pid, _, _, _, _, days, counts in per_participant:
        if days.size == 0:
            continue
        records, _, _ = participant_consistency(pid, days, counts, ConsistencyConfig(segmentation=seg,
                                                                                     min_available_fraction=0.0))
        acc: dict[str, list[float]] = {}
        for r in records:
            if r.kind == "long" and r.day_class == "workday":
                acc.setdefault(r.date.strftime("%Y-%m"), []).append(r.value)
        for ym, vals in acc.items():
            realized[(pid, ym)] = float(np.mean(vals))
    keys = sorted(realized)
    rz = dict(zip(keys, _zs(np.array([realized[k] for k in keys])))) if keys else {}

    surveys: list[SurveyResponse] = []
    for pid, prof, z, enrolled, rng, days, counts in per_participant:
        enrolled_months = sorted({all_month[i] for i in enrolled})
        p_mean = np.mean([rz[(pid, ym)] for ym in enrolled_months if (pid, ym) in rz] or [0.0])
        for ym in enrolled_months:
            answered = rng.random() < cfg.survey_response_prob
            noise = rng.normal(0.0, cfg.onsite_noise_sd)
            y, m = map(int, ym.split("-"))
            leave = int(min(rng.poisson(cfg.leave_days_mean), calendar.monthrange(y, m)[1]))
            if not answered:
                continue
            onsite = (cfg.onsite_intercept + cfg.onsite_consistency_slope * rz.get((pid, ym), p_mean)
                      + cfg.onsite_stringency_slope * s_z[ym]
                      + cfg.onsite_male_shift * (prof.gender == "male")
                      + cfg.onsite_service_shift * (prof.role == "service") + noise)
            surveys.append(SurveyResponse(pid, ym, round(float(np.clip(onsite, 0, 100)), 1), leave))
        level = rng.normal(0.0, cfg.activity_participant_sd)
        stage_month = {"pre": months[0], "early": months[0], "late": months[-1]}
        for stage in ("pre", "early", "late"):
            if stage == "late" and enrolled.size and enrolled[-1] < n_days - 1:
                continue  # dropped out before the exit survey
            vals = {}
            for act, means in cfg.stage_activity.items():
                v = means[stage] * math.exp(level + rng.normal(0.0, cfg.activity_noise_sd))
                vals[act] = round(float(min(v, 100.0) if act == "onsite_pct" else v), 2)
            surveys.append(SurveyResponse(pid, stage_month[stage], vals["onsite_pct"], 0,
                                          vals["walking_hours"], vals["nonwalking_hours"], stage))

    stringency = []
    for i, d in enumerate(all_days.astype(object)):
        level = s_levels[months.index(all_month[i])]
        stringency.append(StringencyPoint(d, round(float(level), 2)))

    steps = pd.concat(step_frames, ignore_index=True) if step_frames else pd.DataFrame(
        columns=["participant_id", "date", "hour", "steps"])
    truth = {
        "config": cfg.to_dict(),
        "stringency_monthly": dict(zip(months, [round(float(v), 2) for v in s_levels])),
        "participants": {pid: {"latent_z": float(z), "live_alone": prof.live_alone, "migrant": prof.migrant}
                         for pid, prof, z, *_ in per_participant},
        "planted": {
            "live_alone_consistency": {"direction": -1 if cfg.live_alone_deficit > 0 else 0,
                                       "latent_sd_units": cfg.live_alone_deficit},
            "migrant_consistency": {"direction": -1 if cfg.migrant_deficit > 0 else 0,
                                    "latent_sd_units": cfg.migrant_deficit},
            "onsite_consistency_slope": {"direction": int(np.sign(cfg.onsite_consistency_slope)),
                                         "model3_coefficient": cfg.onsite_consistency_slope / 100.0},
            "stringency_onsite": {"direction": int(np.sign(cfg.onsite_stringency_slope))},
            "stringency_consistency": {"direction": -int(np.sign(cfg.stringency_consistency_effect))},
        },
    }
    return SimulatedCohort(steps, profiles, surveys, stringency, truth)


def planted_effect_report(fits: dict, ground_truth: dict, stringency_correlations: dict | None = None) -> dict:
    """Compare fitted effects with the planted ones.

    ``fits`` maps model name to a fit summary (see ``lmm.fit_summary``) that
    includes bootstrap intervals; ``stringency_correlations`` maps model name
    to the Pearson r between its month intercepts and monthly stringency.
    """
    planted = ground_truth["planted"]
    out: dict[str, dict] = {}

    def coef(summary, term):
        for row in summary["coefficients"]:
            if row["term"] == term:
                return row
        return None

    def entry(direction, row, truth=None):
        est, lo, hi = row["estimate"], row.get("ci_lower"), row.get("ci_upper")
        detected = lo is not None and (lo > 0 or hi < 0)
        rec = {"true_direction": direction, "estimate": est, "ci": [lo, hi],
               "sign_recovered": bool(np.sign(est) == direction) if direction else None,
               "detected": bool(detected)}
        if truth is not None and lo is not None:
            rec["ci_covers_truth"] = bool(lo <= truth <= hi)
        return rec

    if "1b" in fits:
        for key, term in (("live_alone_consistency", "live_alone[yes]"), ("migrant_consistency", "migrant[yes]")):
            row = coef(fits["1b"], term)
            if row is not None:
                out[key] = entry(planted[key]["direction"], row)
    if "3" in fits:
        row = coef(fits["3"], "long_wd")
        if row is not None:
            p = planted["onsite_consistency_slope"]
            out["onsite_consistency_slope"] = entry(p["direction"], row, p["model3_coefficient"])
    for name, r in (stringency_correlations or {}).items():
        key = "stringency_onsite" if name == "3" else "stringency_consistency"
        direction = planted[key]["direction"]
        out[f"stringency_intercepts_{name}"] = {"true_direction": direction, "r": r,
                                                "sign_recovered": bool(np.sign(r) == direction) if direction else None}
    return out


def summarize_recovery(reports: list[dict]) -> dict:
    """Detection and sign-recovery rates over many simulated cohorts."""
    keys = sorted({k for r in reports for k in r})
    out = {}
    for k in keys:
        rows = [r[k] for r in reports if k in r]
        out[k] = {"n": len(rows),
                  "sign_rate": float(np.mean([bool(x.get("sign_recovered")) for x in rows]))}
        if any("detected" in x for x in rows):
            out[k]["detection_rate"] = float(np.mean([x.get("detected", False) for x in rows]))
            out[k]["detect_and_sign_rate"] = float(np.mean([x.get("detected", False) and bool(x.get("sign_recovered"))
                                                            for x in rows]))
    return out
