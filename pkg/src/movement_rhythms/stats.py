"""Rank tests, correlation, standardization and smoothing."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special
from scipy.stats import rankdata


class StatsError(ValueError):
    pass


@dataclass
class TestResult:
    statistic: float
    p_value: float
    method: str  # exact | normal_approx
    n: int | tuple[int, int]
    degenerate: bool = False
    details: dict = field(default_factory=dict)

    __test__ = False  # keep pytest from collecting this class


def _norm_sf(z: float) -> float:
    return 0.5 * special.erfc(z / np.sqrt(2.0))


def _two_sided(lower: float, upper: float) -> float:
    return float(min(1.0, 2.0 * min(lower, upper)))


def _signed_rank_counts(doubled_ranks: np.ndarray) -> np.ndarray:
    """Number of sign patterns giving each doubled positive-rank sum."""
    counts = np.zeros(int(doubled_ranks.sum()) + 1)
    counts[0] = 1.0
    for r in doubled_ranks.astype(int):
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:counts.size - r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(before: Sequence[float], after: Sequence[float] | None = None,
                         method: str = "auto", exact_threshold: int = 20) -> TestResult:
    """Two-sided Wilcoxon signed-rank test on paired samples.

    Pass either the paired samples or a single array of differences. Zero
    differences are dropped and tied magnitudes get midranks. The reported
    statistic is W+, the rank sum of positive differences. The exact branch
    enumerates the sign-flip distribution (with the observed midranks);
    otherwise a tie-corrected normal approximation with continuity correction
    is used.
    """
    d = np.asarray(before, dtype=float)
    if after is not None:
        after = np.asarray(after, dtype=float)
        if after.shape != d.shape:
            raise StatsError("paired samples must have equal length")
        d = after - d
    if d.size == 0:
        raise StatsError("at least one pair is required")
    n_total = d.size
    d = d[d != 0]
    n = d.size
    if n == 0:
        return TestResult(0.0, 1.0, "exact", n_total, degenerate=True,
                          details={"reason": "all differences are zero"})
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    details = {"w_plus": w_plus, "w_minus": w_minus, "n_nonzero": n, "n_zero": n_total - n}
    if method == "exact" or (method == "auto" and n <= exact_threshold):
        counts = _signed_rank_counts(np.rint(2 * ranks))
        total = counts.sum()
        w2 = int(round(2 * w_plus))
        lower = counts[:w2 + 1].sum() / total
        upper = counts[w2:].sum() / total
        return TestResult(w_plus, _two_sided(lower, upper), "exact", n_total, details=details)
    _, tie_counts = np.unique(ranks, return_counts=True)
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - (tie_counts ** 3 - tie_counts).sum() / 48.0
    if var <= 0:
        return TestResult(w_plus, 1.0, "normal_approx", n_total, degenerate=True, details=details)
    z = max(abs(w_plus - mean) - 0.5, 0.0) / np.sqrt(var)
    details["z"] = float(np.sign(w_plus - mean) * z)
    return TestResult(w_plus, min(1.0, 2.0 * _norm_sf(z)), "normal_approx", n_total, details=details)


def _rank_sum_counts(doubled_ranks: np.ndarray, k: int) -> np.ndarray:
    """counts[s] = number of k-subsets of the pooled ranks with doubled sum s."""
    total = int(doubled_ranks.sum())
    dp = np.zeros((k + 1, total + 1))
    dp[0, 0] = 1.0
    for r in doubled_ranks.astype(int):
        # walk chosen-count downwards so each item is used at most once
        dp[1:, r:] += dp[:-1, :total + 1 - r].copy()
    return dp[k]


def mann_whitney_u(x: Sequence[float], y: Sequence[float], method: str = "auto",
                   exact_max_product: int = 400) -> TestResult:
    """Two-sided Mann-Whitney U test.

    Reports ``min(U_x, U_y)``; both raw values are kept in ``details``. Exact
    when ``len(x) * len(y) <= exact_max_product`` (permutation distribution of
    the observed midranks), else tie-corrected normal approximation with
    continuity correction.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    nx, ny = x.size, y.size
    if nx == 0 or ny == 0:
        raise StatsError("both samples must be non-empty")
    pooled = np.concatenate([x, y])
    ranks = rankdata(pooled)
    u_x = float(ranks[:nx].sum() - nx * (nx + 1) / 2.0)
    u_y = nx * ny - u_x
    details = {"u_x": u_x, "u_y": u_y}
    stat = min(u_x, u_y)
    n = (nx, ny)
    if np.all(pooled == pooled[0]):
        return TestResult(stat, 1.0, "exact", n, degenerate=True, details=details)
    if method == "exact" or (method == "auto" and nx * ny <= exact_max_product):
        counts = _rank_sum_counts(np.rint(2 * ranks), nx)
        total = counts.sum()
        s2 = int(round(2 * (u_x + nx * (nx + 1) / 2.0)))
        lower = counts[:s2 + 1].sum() / total
        upper = counts[s2:].sum() / total
        return TestResult(stat, _two_sided(lower, upper), "exact", n, details=details)
    big_n = nx + ny
    _, tie_counts = np.unique(ranks, return_counts=True)
    tie_term = (tie_counts ** 3 - tie_counts).sum() / (big_n * (big_n - 1))
    var = nx * ny / 12.0 * ((big_n + 1) - tie_term)
    mean = nx * ny / 2.0
    z = max(abs(u_x - mean) - 0.5, 0.0) / np.sqrt(var)
    details["z"] = float(np.sign(u_x - mean) * z)
    return TestResult(stat, min(1.0, 2.0 * _norm_sf(z)), "normal_approx", n, details=details)


def pearson_r(x: Sequence[float], y: Sequence[float]) -> TestResult:
    """Pearson correlation with a two-sided t-test on n-2 degrees of freedom."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise StatsError("series must have equal length")
    n = x.size
    if n < 3:
        raise StatsError("need at least 3 points")
    xc, yc = x - x.mean(), y - y.mean()
    sxx, syy = float(xc @ xc), float(yc @ yc)
    if sxx == 0 or syy == 0:
        raise StatsError("zero variance series")
    r = float(np.clip((xc @ yc) / np.sqrt(sxx * syy), -1.0, 1.0))
    if abs(r) == 1.0:
        p = 0.0
    else:
        t = abs(r) * np.sqrt((n - 2) / (1.0 - r * r))
        p = float(2.0 * special.stdtr(n - 2, -t))
    return TestResult(r, min(p, 1.0), "t_dist", n)


def zscore(values: Sequence[float]) -> np.ndarray:
    """Center and scale by the sample (ddof=1) standard deviation."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise StatsError("need at least two values to standardize")
    sd = v.std(ddof=1)
    if not sd > 0:
        raise StatsError("cannot standardize a constant column")
    return (v - v.mean()) / sd


def rolling_mean(series: Sequence[float], window: int = 7) -> np.ndarray:
    """Trailing moving average; the first ``window - 1`` positions are NaN."""
    if window < 1:
        raise StatsError("window must be >= 1")
    s = np.asarray(series, dtype=float)
    out = np.full(s.shape, np.nan)
    if window > s.size:
        return out
    out[window - 1:] = np.lib.stride_tricks.sliding_window_view(s, window).mean(axis=-1)
    return out


def stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""
