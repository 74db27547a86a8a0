"""JSON and Markdown summaries of fitted models."""
from __future__ import annotations

import json

from ..stats import stars
from .bootstrap import BootstrapResult
from .design import DesignMatrix
from .gvif import GVIF
from .reml import ModelFit


def _r(x: float, nd: int = 6) -> float:
    return float(round(x, nd))


def fit_summary(fit: ModelFit, design: DesignMatrix, boot: BootstrapResult | None = None,
                gvifs: list[GVIF] | None = None, name: str = "") -> dict:
    coefs = []
    for i, col in enumerate(fit.columns):
        row = {"term": col, "estimate": _r(fit.beta[i]), "se": _r(fit.se[i])}
        if boot is not None:
            row.update(ci_lower=_r(boot.ci_lower[i]), ci_upper=_r(boot.ci_upper[i]),
                       p_value=_r(boot.p_values[i]), stars=stars(boot.p_values[i]))
        coefs.append(row)
    out = {
        "model": name,
        "formula": design.spec.to_formula(),
        "grouping": design.spec.grouping,
        "coefficients": coefs,
        "sigma2": _r(fit.sigma2),
        "tau00": _r(fit.tau00),
        "icc": _r(fit.icc),
        "n_groups": fit.n_groups,
        "n_obs": fit.n_obs,
        "rows_dropped_missing": design.n_dropped,
        "r2_marginal": _r(fit.r2_marginal),
        "r2_conditional": _r(fit.r2_conditional),
        "reml_loglik": _r(fit.reml_loglik),
        "boundary": bool(fit.boundary),
        "unimodal_profile": bool(fit.unimodal),
        "random_intercepts": {str(k): _r(v) for k, v in sorted(fit.intercepts.items(), key=lambda kv: str(kv[0]))},
    }
    if boot is not None:
        out["bootstrap"] = {"replicates": boot.n_replicates, "dropped": boot.n_dropped, "seed": boot.seed}
    if gvifs is not None:
        out["gvif"] = [{"term": g.term, "df": int(g.df), "gvif": _r(g.gvif), "adjusted": _r(g.adjusted),
                        "flagged": bool(g.flagged)} for g in gvifs]
    return out


def to_json(summary: dict) -> str:
    return json.dumps(summary, indent=2, sort_keys=False) + "\n"


def markdown_table(summary: dict) -> str:
    title = summary.get("model") or summary["formula"]
    lines = [f"### {title}", "", "| | Est. | 95% CI | |", "|---|---:|---:|---|"]
    for row in summary["coefficients"]:
        ci = f"{row['ci_lower']:.2f} – {row['ci_upper']:.2f}" if "ci_lower" in row else ""
        lines.append(f"| {row['term']} | {row['estimate']:.2f} | {ci} | {row.get('stars', '')} |")
    g = summary["grouping"]
    lines += [
        "| **Random effects** | | | |",
        f"| σ² | {summary['sigma2']:.2f} | | |",
        f"| τ00 ({g}) | {summary['tau00']:.2f} | | |",
        f"| ICC | {summary['icc']:.2f} | | |",
        f"| N ({g}) | {summary['n_groups']} | | |",
        f"| Observations | {summary['n_obs']} | | |",
        f"| Marginal R² / Conditional R² | {summary['r2_marginal']:.3f} / {summary['r2_conditional']:.3f} | | |",
        "",
        "*p<0.05, **p<0.01, ***p<0.001",
        "",
    ]
    return "\n".join(lines)
