"""Formula parsing and design-matrix construction for random-intercept models."""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from ..stats import StatsError, zscore


class DesignError(ValueError):
    pass


# reference (baseline) level per covariate; everything else gets a dummy column
DEFAULT_REFERENCES = {
    "gender": "female",
    "role": "academic",
    "origin": "finland",
    "migrant": False,
    "live_alone": False,
    "has_children": False,
}


@dataclass(frozen=True)
class ModelSpec:
    response: str
    fixed_terms: tuple[str, ...]
    grouping: str
    standardize_response: bool = True
    references: tuple[tuple[str, object], ...] = ()

    def __post_init__(self):
        mains = {t for t in self.fixed_terms if ":" not in t}
        for t in self.fixed_terms:
            if ":" in t:
                missing = [p for p in t.split(":") if p not in mains]
                if missing:
                    raise DesignError(f"interaction {t} references undeclared main effects {missing}")

    @property
    def reference_map(self) -> dict:
        return {**DEFAULT_REFERENCES, **dict(self.references)}

    @property
    def columns(self) -> list[str]:
        cols = [self.response, self.grouping]
        for t in self.fixed_terms:
            for part in t.split(":"):
                if part not in cols:
                    cols.append(part)
        return cols

    def to_formula(self) -> str:
        return f"{self.response} ~ {' + '.join(self.fixed_terms)}, group = {self.grouping}"


_TERM = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def parse_formula(text: str, standardize_response: bool = True) -> ModelSpec:
    """Parse ``y ~ a + b + a:b, group = g``; ``a*b`` expands to ``a + b + a:b``."""
    head, _, opts = text.partition(",")
    if "~" not in head:
        raise DesignError(f"formula needs '~': {text!r}")
    response, rhs = (s.strip() for s in head.split("~", 1))
    group = None
    for opt in filter(None, (o.strip() for o in opts.split(","))):
        key, _, value = (s.strip() for s in opt.partition("="))
        if key != "group" or not value:
            raise DesignError(f"unknown formula option {opt!r}")
        group = value
    if group is None:
        raise DesignError("formula needs a grouping option, e.g. ', group = participant'")
    terms: list[str] = []

    def add(t):
        if t not in terms:
            terms.append(t)

    for raw in filter(None, (t.strip() for t in rhs.split("+"))):
        if raw == "1":
            continue
        if "*" in raw:
            parts = [p.strip() for p in raw.split("*")]
            for p in parts:
                add(p)
            add(":".join(parts))
        else:
            add(":".join(p.strip() for p in raw.split(":")))
    for t in terms + [response, group]:
        for p in t.split(":"):
            if not _TERM.match(p):
                raise DesignError(f"bad term name {p!r}")
    # main effects first keeps interaction columns after their parents
    terms.sort(key=lambda t: ":" in t)
    return ModelSpec(response, tuple(terms), group, standardize_response)


@dataclass
class DesignMatrix:
    y: np.ndarray
    X: np.ndarray
    groups: np.ndarray  # integer code per row
    group_levels: list
    columns: list[str]  # X column names, "(Intercept)" first
    term_columns: dict[str, list[int]]
    spec: ModelSpec
    n_dropped: int = 0
    scaling: dict[str, tuple[float, float]] = field(default_factory=dict)

    @property
    def n_obs(self) -> int:
        return self.y.size

    @property
    def n_groups(self) -> int:
        return len(self.group_levels)

    def term_df(self, term: str) -> int:
        return len(self.term_columns[term])

    def with_response(self, y: np.ndarray) -> "DesignMatrix":
        return DesignMatrix(np.asarray(y, dtype=float), self.X, self.groups, self.group_levels,
                            self.columns, self.term_columns, self.spec, self.n_dropped, self.scaling)


def _label(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "yes" if value else "no"
    return str(value)


def _code_main(name: str, col: pd.Series, reference, scaling: dict):
    """Return (matrix, names) coding one main effect."""
    if col.dtype == object and col.map(lambda v: isinstance(v, (bool, np.bool_))).all():
        col = col.astype(bool)
    if pd.api.types.is_bool_dtype(col):
        return col.to_numpy(dtype=float)[:, None], [f"{name}[yes]"]
    if pd.api.types.is_numeric_dtype(col):
        v = col.to_numpy(dtype=float)
        try:
            z = zscore(v)
        except StatsError as exc:
            raise DesignError(f"numeric covariate {name}: {exc}") from None
        scaling[name] = (float(v.mean()), float(v.std(ddof=1)))
        return z[:, None], [name]
    levels = sorted(col.astype(str).unique())
    ref = _label(reference) if reference is not None else levels[0]
    if ref not in levels:
        ref = levels[0]
    others = [lv for lv in levels if lv != ref]
    vals = col.astype(str).to_numpy()
    mat = np.column_stack([(vals == lv).astype(float) for lv in others]) if others else np.empty((len(col), 0))
    return mat, [f"{name}[{lv}]" for lv in others]


def build_design(spec: ModelSpec, data: pd.DataFrame) -> DesignMatrix:
    """Code ``data`` for ``spec``: dummy-code categoricals against their reference
    level, standardize numeric covariates (and the response unless disabled),
    and form interactions as products of the coded parent columns. Rows with a
    missing value in any referenced column are dropped and counted."""
    missing = [c for c in spec.columns if c not in data.columns]
    if missing:
        raise DesignError(f"columns not found: {missing}")
    frame = data[spec.columns]
    keep = frame.notna().all(axis=1).to_numpy()
    frame = frame.loc[keep].reset_index(drop=True)
    if frame.empty:
        raise DesignError("no complete rows")
    refs = spec.reference_map
    scaling: dict[str, tuple[float, float]] = {}
    coded: dict[str, tuple[np.ndarray, list[str]]] = {}
    for term in spec.fixed_terms:
        if ":" not in term:
            coded[term] = _code_main(term, frame[term], refs.get(term), scaling)
    cols = [np.ones(len(frame))]
    names = ["(Intercept)"]
    term_columns: dict[str, list[int]] = {}
    for term in spec.fixed_terms:
        if ":" in term:
            mats = [coded[p] for p in term.split(":")]
            mat, labels = mats[0]
            for other, olabels in mats[1:]:
                mat = np.column_stack([mat[:, i] * other[:, j]
                                       for i in range(mat.shape[1]) for j in range(other.shape[1])])
                labels = [f"{a}:{b}" for a in labels for b in olabels]
        else:
            mat, labels = coded[term]
        if mat.shape[1] == 0:
            raise DesignError(f"term {term} has a single level after exclusions")
        term_columns[term] = list(range(len(names), len(names) + mat.shape[1]))
        cols.extend(mat.T)
        names.extend(labels)
    X = np.column_stack(cols)
    y = frame[spec.response].to_numpy(dtype=float)
    if spec.standardize_response:
        scaling[spec.response] = (float(y.mean()), float(y.std(ddof=1)))
        try:
            y = zscore(y)
        except StatsError as exc:
            raise DesignError(f"response {spec.response}: {exc}") from None
    group_vals = frame[spec.grouping].astype(str).to_numpy()
    levels, codes = np.unique(group_vals, return_inverse=True)
    if len(levels) < 2:
        raise DesignError(f"grouping {spec.grouping} needs at least 2 levels")
    return DesignMatrix(y, X, codes.astype(int), levels.tolist(), names, term_columns, spec,
                        int((~keep).sum()), scaling)


def design_from_arrays(y, X, groups, columns=None) -> DesignMatrix:
    """Wrap raw arrays (X must include the intercept column) as a DesignMatrix."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    levels, codes = np.unique(np.asarray(groups), return_inverse=True)
    columns = list(columns) if columns is not None else ["(Intercept)"] + [f"x{i}" for i in range(1, X.shape[1])]
    terms = {c: [i] for i, c in enumerate(columns) if i > 0}
    spec = ModelSpec("y", tuple(columns[1:]), "group", standardize_response=False)
    return DesignMatrix(y, X, codes.astype(int), levels.tolist(), columns, terms, spec)
