"""Random-intercept linear mixed models fitted by REML."""
from .bootstrap import BootstrapResult, parametric_bootstrap
from .design import DesignError, DesignMatrix, ModelSpec, build_design, design_from_arrays, parse_formula
from .gvif import GVIF, CollinearityError, gvif, gvif_from_matrix
from .reml import (LMMError, ModelFit, RankDeficientError, extract_random_intercepts, fit_reml, icc,
                   icc_from_components, r2_nakagawa)
from .report import fit_summary, markdown_table, to_json

__all__ = [
    "BootstrapResult", "CollinearityError", "DesignError", "DesignMatrix", "GVIF", "LMMError",
    "ModelFit", "ModelSpec", "RankDeficientError", "build_design", "design_from_arrays",
    "extract_random_intercepts", "fit_reml", "fit_summary", "gvif", "gvif_from_matrix", "icc",
    "icc_from_components", "markdown_table", "parametric_bootstrap", "parse_formula", "r2_nakagawa",
    "to_json",
]
