"""Command-line front end.

Every command reads a JSON run configuration (``--config``), applies the
global overrides, writes its outputs under ``--out`` together with a copy of
the effective configuration, and exits 0 on success, 1 on invalid input or an
empty dataset, 2 on runtime or convergence failures.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from datetime import date
from pathlib import Path

import numpy as np
import pandas as pd

from . import analysis
from .consistency import (ConsistencyConfig, EmptyDatasetError, compute_consistency, read_monthly,
                          steps_frame, write_audit, write_monthly, write_records)
from .ingest import (IngestError, fetch_oxcgrt, localize_step_records, parse_demographics,
                     parse_step_records, parse_stringency, parse_survey)
from .lmm import LMMError, RankDeficientError, markdown_table, to_json
from .rhythm import RhythmError, Segmentation
from .simulator import SimulationError, cohort_config_from_dict, simulate_cohort
from .stats import StatsError, mann_whitney_u, wilcoxon_signed_rank

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
CONFIG_NAME = "run_config.json"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    steps: str | None = None
    demographics: str | None = None
    survey: str | None = None
    stringency: str | None = None
    step_columns: dict = field(default_factory=dict)
    demographics_columns: dict = field(default_factory=dict)
    survey_columns: dict = field(default_factory=dict)
    stringency_columns: dict = field(default_factory=dict)
    region: str = "FIN"
    source_tz: str | None = None
    study_tz: str | None = None
    segmentation: list = field(default_factory=lambda: [0, 6, 12, 18])
    epsilon: float = 1e-6
    min_available_fraction: float = 0.20
    study_span: list | None = None
    min_workdays: int = 5
    min_weekends: int = 2
    max_leave_days: int = 7
    models: dict = field(default_factory=dict)
    bootstrap_replicates: int = 1000
    seed: int = 0
    workers: int = 1
    out: str = "out"
    rolling_window: int = 7
    segment_counts: list = field(default_factory=lambda: [4, 6, 8, 12])
    simulate: dict = field(default_factory=dict)

    def validate(self) -> None:
        for name in ("epsilon", "min_available_fraction", "min_workdays", "min_weekends",
                     "max_leave_days", "bootstrap_replicates", "workers", "rolling_window"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.min_available_fraction > 1:
            raise ConfigError("min_available_fraction must not exceed 1")
        if bool(self.source_tz) != bool(self.study_tz):
            raise ConfigError("source_tz and study_tz must be given together")
        if self.study_span is not None and len(self.study_span) != 2:
            raise ConfigError("study_span must be [start, end]")
        try:
            Segmentation(tuple(self.segmentation))
            for k in self.segment_counts:
                Segmentation.uniform(int(k))
        except RhythmError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        cfg = cls.from_dict(raw)
        # relative paths are relative to the config file
        for name in ("steps", "demographics", "survey", "stringency", "out"):
            value = getattr(cfg, name)
            if value and not Path(value).is_absolute():
                setattr(cfg, name, str((path.parent / value).resolve()))
        return cfg

    def consistency_config(self) -> ConsistencyConfig:
        span = None
        if self.study_span:
            span = tuple(date.fromisoformat(str(d)) for d in self.study_span)
        return ConsistencyConfig(Segmentation(tuple(self.segmentation)), float(self.epsilon),
                                 float(self.min_available_fraction), span, int(self.min_workdays),
                                 int(self.min_weekends))


# --------------------------------------------------------------------------
# input helpers

def _require(cfg: RunConfig, name: str) -> str:
    value = getattr(cfg, name)
    if not value:
        raise ConfigError(f"config has no '{name}' input path")
    if not Path(value).is_file():
        raise ConfigError(f"cannot read {name} input {value}")
    return value


def _parsed(result, what: str):
    if result.rejected:
        first = result.rejected[0]
        raise IngestError(f"{what}: {len(result.rejected)} invalid rows (first: line {first.line}: "
                          f"{first.message})")
    for w in result.warnings:
        print(f"warning: {what}: {w}", file=sys.stderr)
    return result.records


def _load_steps(cfg: RunConfig) -> pd.DataFrame:
    records = _parsed(parse_step_records(_require(cfg, "steps"), cfg.step_columns), "steps")
    if cfg.source_tz:
        records = localize_step_records(records, cfg.source_tz, cfg.study_tz)
    return steps_frame(records)


def _load_profiles(cfg):
    return _parsed(parse_demographics(_require(cfg, "demographics"), cfg.demographics_columns), "demographics")


def _load_survey(cfg):
    return _parsed(parse_survey(_require(cfg, "survey"), cfg.survey_columns), "survey")


def _load_stringency(cfg):
    return _parsed(parse_stringency(_require(cfg, "stringency"), cfg.region, cfg.stringency_columns),
                   "stringency")


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc.strerror}") from None
    (out / CONFIG_NAME).write_text(cfg.dumps(), encoding="utf-8")
    return out


def _write_frame(frame: pd.DataFrame, path: Path) -> None:
    frame.to_csv(path, index=False, lineterminator="\n", float_format="%.17g")


def _monthly_table(cfg: RunConfig, out: Path) -> pd.DataFrame:
    """Monthly consistency from an earlier ``consistency`` run, else computed now."""
    existing = out / "monthly.csv"
    if existing.is_file():
        return read_monthly(existing)
    result = compute_consistency(_load_steps(cfg), cfg.consistency_config(), workers=cfg.workers)
    write_monthly(result.monthly, existing)
    return result.monthly_frame()


# --------------------------------------------------------------------------
# commands

def cmd_simulate(cfg: RunConfig, args) -> int:
    sim_cfg = cohort_config_from_dict({**cfg.simulate, "seed": cfg.seed})
    sim_cfg.validate()
    out = Path(cfg.out)
    cohort = simulate_cohort(sim_cfg)
    paths = cohort.write(out)
    # a ready-to-use configuration pointing at the generated files
    cfg.steps, cfg.demographics = paths["steps"].name, paths["demographics"].name
    cfg.survey, cfg.stringency = paths["survey"].name, paths["stringency"].name
    cfg.out = "."
    cfg.simulate = json.loads(json.dumps(sim_cfg.to_dict()))
    (out / CONFIG_NAME).write_text(cfg.dumps(), encoding="utf-8")
    print(f"simulated {sim_cfg.n_participants} participants, {len(cohort.steps)} step rows -> {out}")
    return EXIT_OK


def cmd_ingest_check(cfg: RunConfig, args) -> int:
    parsers = {
        "steps": lambda p: parse_step_records(p, cfg.step_columns),
        "demographics": lambda p: parse_demographics(p, cfg.demographics_columns),
        "survey": lambda p: parse_survey(p, cfg.survey_columns),
        "stringency": lambda p: parse_stringency(p, cfg.region, cfg.stringency_columns),
    }
    status = EXIT_OK
    checked = 0
    for name, parse in parsers.items():
        if not getattr(cfg, name):
            continue
        checked += 1
        result = parse(_require(cfg, name))
        print(f"{name}: {result.n_rows} rows, {len(result.records)} accepted, {len(result.rejected)} rejected")
        for w in result.warnings:
            print(f"  warning: {w}")
        for r in result.rejected[:args.max_errors]:
            print(f"  line {r.line}: {r.message}")
        if result.rejected:
            status = EXIT_INVALID
    if not checked:
        raise ConfigError("no input paths configured")
    return status


def cmd_consistency(cfg: RunConfig, args) -> int:
    steps = _load_steps(cfg)
    result = compute_consistency(steps, cfg.consistency_config(), workers=cfg.workers)
    out = _out_dir(cfg)
    write_records(result.records, out / "consistency.csv")
    write_monthly(result.monthly, out / "monthly.csv")
    write_audit(result.audit, out / "audit.csv")
    print(f"{len(result.kept_participants)} participants, {len(result.records)} consistency records, "
          f"{len(result.monthly)} participant-months, {len(result.audit)} exclusions -> {out}")
    return EXIT_OK


def cmd_compare(cfg: RunConfig, args) -> int:
    surveys, profiles = _load_survey(cfg), _load_profiles(cfg)
    stages = analysis.compare_stages(surveys, profiles)
    groups = analysis.compare_groups(surveys, profiles)
    out = _out_dir(cfg)
    _write_frame(stages, out / "compare_stages.csv")
    _write_frame(groups, out / "compare_groups.csv")
    cols = [c for c in ("activity", "subpopulation", "mean_pre", "mean_early", "p_early", "stars_early",
                        "mean_late", "p_late", "stars_late", "note") if c in stages]
    print(stages[cols].to_string(index=False, float_format=lambda v: f"{v:.3g}"))
    return EXIT_OK


def _model_table(cfg: RunConfig, out: Path):
    monthly = _monthly_table(cfg, out)
    surveys = _load_survey(cfg) if cfg.survey else []
    table, audit = analysis.build_model_table(monthly, _load_profiles(cfg), surveys)
    return table, audit


def _fit_one(cfg: RunConfig, table: pd.DataFrame, model: str):
    formula = cfg.models.get(model, model)
    run = analysis.run_model(formula, table, n_boot=cfg.bootstrap_replicates, seed=cfg.seed,
                             workers=cfg.workers, max_leave_days=cfg.max_leave_days)
    label = model if (model in cfg.models or model in analysis.MODEL_FORMULAS) else "custom"
    run.summary["model"] = f"Model {label}"
    return label, run


def cmd_fit(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    table, audit = _model_table(cfg, out)
    label, run = _fit_one(cfg, table, args.model)
    if run.design.spec.response == "onsite":
        _, excluded = analysis.model3_rows(table, cfg.max_leave_days)
        audit = audit + excluded
    stem = f"fit_{label}"
    (out / f"{stem}.json").write_text(to_json(run.summary), encoding="utf-8")
    (out / f"{stem}.md").write_text(markdown_table(run.summary), encoding="utf-8")
    _write_frame(pd.DataFrame(audit, columns=["level", "participant_id", "year_month", "rule", "detail"]),
                 out / f"{stem}_audit.csv")
    print(markdown_table(run.summary))
    return EXIT_OK


def cmd_stringency(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    stringency = analysis.monthly_stringency(_load_stringency(cfg))
    table, _ = _model_table(cfg, out)
    report, series = {}, None
    for model in ("1b_month", "3"):
        _, run = _fit_one(cfg, table, model)
        res, aligned = analysis.intercept_stringency_correlation(run.fit, stringency)
        report[model] = {"formula": run.design.spec.to_formula(), "r": round(res.statistic, 6),
                         "p": round(res.p_value, 6), "n_months": res.n}
        aligned = aligned.rename(columns={"intercept": f"intercept_{model}"})
        series = aligned if series is None else series.merge(aligned, on=["year_month", "stringency"], how="outer")
    (out / "stringency_correlation.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    _write_frame(series.sort_values("year_month"), out / "stringency_series.csv")
    daily, monthly = analysis.multi_segmentation_series(
        _load_steps(cfg), tuple(int(k) for k in cfg.segment_counts), cfg.consistency_config(),
        cfg.rolling_window, cfg.workers)
    _write_frame(daily, out / "segmentation_daily.csv")
    _write_frame(monthly, out / "segmentation_monthly.csv")
    for model, r in report.items():
        print(f"{model}: r = {r['r']:.3f}, p = {r['p']:.3g}, months = {r['n_months']}")
    return EXIT_OK


def cmd_test(cfg: RunConfig, args) -> int:
    frame = pd.read_csv(args.csv)
    for col in (args.x, args.y):
        if col not in frame:
            raise ConfigError(f"column {col!r} not in {args.csv}")
    if args.paired:
        pairs = frame[[args.x, args.y]].dropna()
        res = wilcoxon_signed_rank(pairs[args.x].to_numpy(), pairs[args.y].to_numpy())
    else:
        res = mann_whitney_u(frame[args.x].dropna().to_numpy(), frame[args.y].dropna().to_numpy())
    print("statistic\tp\tmethod\tn")
    print(f"{res.statistic:.6g}\t{res.p_value:.6g}\t{res.method}\t{res.n}")
    return EXIT_OK


def cmd_fetch_oxcgrt(cfg: RunConfig, args) -> int:
    dest = Path(args.dest) if args.dest else Path(cfg.out) / "oxcgrt.csv"
    kwargs = {"url": args.url} if args.url else {}
    path = fetch_oxcgrt(dest, **kwargs)
    print(f"saved {path}")
    return EXIT_OK


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="movement-rhythms",
                                     description="Movement-rhythm consistency from hourly step counts.")
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--seed", type=int, help="random seed (simulation and bootstrap)")
    parser.add_argument("--workers", type=int, help="worker processes; never changes results")
    parser.add_argument("--out", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", help="generate a synthetic cohort with planted effects")
    p = sub.add_parser("ingest-check", help="validate the configured input files")
    p.add_argument("--max-errors", type=int, default=20)
    sub.add_parser("consistency", help="daily consistency records, monthly means and exclusion audit")
    sub.add_parser("compare", help="stage and sub-population rank tests on survey answers")
    p = sub.add_parser("fit", help="fit a mixed model: 1a, 1b, 2, 3, a configured name or a formula")
    p.add_argument("model")
    sub.add_parser("stringency", help="month intercepts vs stringency and multi-segmentation series")
    p = sub.add_parser("test", help="rank test on two columns of a CSV")
    p.add_argument("csv")
    p.add_argument("x")
    p.add_argument("y")
    p.add_argument("--paired", action="store_true", help="Wilcoxon signed-rank instead of Mann-Whitney U")
    p = sub.add_parser("fetch-oxcgrt", help="download the OxCGRT stringency table")
    p.add_argument("--dest")
    p.add_argument("--url")
    return parser


COMMANDS = {
    "simulate": cmd_simulate, "ingest-check": cmd_ingest_check, "consistency": cmd_consistency,
    "compare": cmd_compare, "fit": cmd_fit, "stringency": cmd_stringency, "test": cmd_test,
    "fetch-oxcgrt": cmd_fetch_oxcgrt,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        for name in ("seed", "workers", "out"):
            if getattr(args, name) is not None:
                setattr(cfg, name, getattr(args, name))
        cfg.validate()
        return COMMANDS[args.command](cfg, args)
    except RankDeficientError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (LMMError, EmptyDatasetError) as exc:
        code = EXIT_INVALID if isinstance(exc, EmptyDatasetError) else EXIT_RUNTIME
        print(f"error: {exc}", file=sys.stderr)
        return code
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # anything unexpected is a runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
