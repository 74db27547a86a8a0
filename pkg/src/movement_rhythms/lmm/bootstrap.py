"""Parametric bootstrap for fixed-effect inference."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .design import DesignMatrix
from .reml import LMMError, ModelFit, _Moments, fit_reml


@dataclass
class BootstrapResult:
    columns: list[str]
    estimate: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    p_values: np.ndarray
    n_replicates: int
    n_dropped: int
    seed: int
    draws: np.ndarray

    def table(self) -> list[dict]:
        return [
            {"term": c, "estimate": float(e), "ci_lower": float(lo), "ci_upper": float(hi), "p_value": float(p)}
            for c, e, lo, hi, p in zip(self.columns, self.estimate, self.ci_lower, self.ci_upper, self.p_values)
        ]

    def excludes_zero(self, column: str) -> bool:
        i = self.columns.index(column)
        return bool(self.ci_lower[i] > 0 or self.ci_upper[i] < 0)


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for replicate ``index``; identical to child ``index``
    of ``SeedSequence(seed).spawn(...)``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def _run_chunk(payload) -> np.ndarray:
    design, beta, sigma2, tau00, seed, indices = payload
    mom = _Moments(design.X, design.groups, design.n_groups)
    mean = design.X @ beta
    out = np.full((len(indices), beta.size), np.nan)
    for row, idx in enumerate(indices):
        rng = replicate_rng(seed, idx)
        u = rng.standard_normal(design.n_groups) * np.sqrt(tau00)
        e = rng.standard_normal(design.n_obs) * np.sqrt(sigma2)
        try:
            refit = fit_reml(design.with_response(mean + u[design.groups] + e), _moments=mom)
        except LMMError:
            continue
        out[row] = refit.beta
    return out


def parametric_bootstrap(fit: ModelFit, design: DesignMatrix, n_replicates: int = 1000,
                         seed: int = 0, workers: int = 1, level: float = 0.95,
                         max_drop_fraction: float = 0.10) -> BootstrapResult:
    """Simulate responses from the fitted model, refit, and summarise the
    refitted coefficients: percentile intervals and centred two-sided p-values
    ``2 * min(P(b* - b >= b), P(b* - b <= b))``.

    Results depend only on ``seed``: ``workers`` changes the schedule, not the
    numbers.
    """
    if n_replicates < 100:
        raise ValueError("n_replicates must be at least 100")
    indices = list(range(n_replicates))
    if workers > 1:
        chunks = [indices[i::workers] for i in range(workers)]
        payloads = [(design, fit.beta, fit.sigma2, fit.tau00, seed, ch) for ch in chunks]
        draws = np.empty((n_replicates, fit.beta.size))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for ch, res in zip(chunks, pool.map(_run_chunk, payloads)):
                draws[ch] = res
    else:
        draws = _run_chunk((design, fit.beta, fit.sigma2, fit.tau00, seed, indices))
    ok = ~np.isnan(draws).any(axis=1)
    n_dropped = int((~ok).sum())
    if n_dropped > max_drop_fraction * n_replicates:
        raise LMMError(f"{n_dropped} of {n_replicates} bootstrap refits failed")
    draws = draws[ok]
    alpha = (1.0 - level) / 2.0
    lower, upper = np.percentile(draws, [100 * alpha, 100 * (1 - alpha)], axis=0)
    centred = draws - fit.beta
    share_ge = (centred >= fit.beta).mean(axis=0)
    share_le = (centred <= fit.beta).mean(axis=0)
    p = np.minimum(1.0, 2.0 * np.minimum(share_ge, share_le))
    return BootstrapResult(list(design.columns), fit.beta.copy(), lower, upper, p,
                           n_replicates, n_dropped, seed, draws)
