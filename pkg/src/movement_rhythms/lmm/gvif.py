"""Generalized variance inflation factors (Fox & Monette) per model term."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .design import DesignMatrix


class CollinearityError(ValueError):
    pass


@dataclass(frozen=True)
class GVIF:
    term: str
    df: int
    gvif: float
    adjusted: float  # GVIF ** (1 / (2 df)), comparable across term sizes
    flagged: bool


def gvif_from_matrix(X: np.ndarray, term_columns: dict[str, list[int]],
                     threshold: float = np.sqrt(5.0)) -> list[GVIF]:
    """GVIF_term = det(R_term) det(R_rest) / det(R), where R is the correlation
    matrix of all non-intercept columns. ``term_columns`` index into ``X``;
    column 0 is assumed to be the intercept when listed by no term."""
    if len(term_columns) < 2:
        raise CollinearityError("GVIF needs at least two non-intercept terms")
    cols = sorted(i for idx in term_columns.values() for i in idx)
    pos = {c: k for k, c in enumerate(cols)}
    sub = X[:, cols]
    if np.any(sub.std(axis=0) == 0):
        raise CollinearityError("constant predictor column")
    R = np.corrcoef(sub, rowvar=False)
    if np.linalg.matrix_rank(R, tol=1e-10) < R.shape[0]:
        raise CollinearityError("predictor correlation matrix is singular")
    _, logdet_all = np.linalg.slogdet(R)
    out = []
    for term, idx in term_columns.items():
        inside = [pos[i] for i in idx]
        rest = [k for k in range(len(cols)) if k not in inside]
        ld_in = np.linalg.slogdet(R[np.ix_(inside, inside)])[1]
        ld_rest = np.linalg.slogdet(R[np.ix_(rest, rest)])[1] if rest else 0.0
        g = float(np.exp(ld_in + ld_rest - logdet_all))
        adj = g ** (1.0 / (2 * len(idx)))
        out.append(GVIF(term, len(idx), g, adj, adj > threshold))
    return out


def gvif(design: DesignMatrix, threshold: float = np.sqrt(5.0)) -> list[GVIF]:
    return gvif_from_matrix(design.X, design.term_columns, threshold)
