"""REML fitting of the random-intercept model

    y = X beta + Z u + e,   u_j ~ N(0, tau00),   e ~ N(0, sigma2).

With theta = tau00 / sigma2 the marginal covariance is sigma2 * H(theta),
H = I + theta Z Z'. For each group, H^{-1} acts as the identity on deviations
from the group mean and scales the group mean by 1 / (1 + n_j theta), so every
quantity the profiled criterion needs reduces to within-group cross products
plus a weighted sum over group means. beta and sigma2 are profiled out and the
one remaining parameter is found by root-finding the analytic score in
log(theta) on [-12, 12], with theta = 0 (ordinary least squares) as the lower
boundary.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, qr
from scipy.optimize import brentq

from .design import DesignMatrix

LOG_THETA_BOUNDS = (-12.0, 12.0)
_GRID = np.linspace(*LOG_THETA_BOUNDS, 49)


class LMMError(RuntimeError):
    pass


class RankDeficientError(LMMError, ValueError):
    pass


@dataclass
class ModelFit:
    beta: np.ndarray
    columns: list[str]
    sigma2: float
    tau00: float
    theta: float
    intercepts: dict
    icc: float
    r2_marginal: float
    r2_conditional: float
    reml_loglik: float
    n_obs: int
    n_groups: int
    cov_beta: np.ndarray
    converged: bool = True
    boundary: str | None = None  # "lower" (tau00 = 0) or "upper"
    unimodal: bool = True
    profile: tuple[np.ndarray, np.ndarray] = field(default=None, repr=False)

    def coef(self) -> dict[str, float]:
        return dict(zip(self.columns, self.beta.tolist()))

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov_beta))


class _Moments:
    """Group-level sufficient statistics; the X part is reused across responses."""

    def __init__(self, X: np.ndarray, groups: np.ndarray, n_groups: int):
        self.X = X
        self.groups = groups
        self.n, self.p = X.shape
        self.nj = np.bincount(groups, minlength=n_groups).astype(float)
        if np.any(self.nj == 0):
            raise LMMError("every group level needs at least one observation")
        self.M = np.zeros((n_groups, self.p))
        np.add.at(self.M, groups, X)
        self.M /= self.nj[:, None]
        self.Xc = X - self.M[groups]
        self.Wxx = self.Xc.T @ self.Xc

    def set_response(self, y: np.ndarray) -> "_Moments":
        self.y = y
        my = np.bincount(self.groups, weights=y, minlength=self.nj.size) / self.nj
        self.my = my
        self.yc = y - my[self.groups]
        self.Wxy = self.Xc.T @ self.yc
        return self

    def evaluate(self, theta: float):
        nj, M = self.nj, self.M
        c = nj / (1.0 + nj * theta)
        A = self.Wxx + (M.T * c) @ M
        cf = cho_factor(A)
        beta = cho_solve(cf, self.Wxy + M.T @ (c * self.my))
        rbar = self.my - M @ beta
        within = self.yc - self.Xc @ beta
        rHr = within @ within + c @ (rbar * rbar)
        dof = self.n - self.p
        logdet_a = 2.0 * np.log(np.diag(cf[0])).sum()
        logdet_h = np.log1p(nj * theta).sum()
        crit = dof * np.log(rHr / dof) + logdet_h + logdet_a
        lev = np.einsum("ij,ji->i", M, cho_solve(cf, M.T))
        c2 = c * c
        score = -dof * (c2 @ (rbar * rbar)) / rHr + c.sum() - c2 @ lev
        return crit, score, beta, rHr, cf, rbar, c, logdet_h, logdet_a

    def evaluate_many(self, thetas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Criterion and score at many theta values in one batched pass."""
        nj, M = self.nj, self.M
        c = nj / (1.0 + np.multiply.outer(thetas, nj))
        A = self.Wxx + np.einsum("jp,gj,jq->gpq", M, c, M)
        L = np.linalg.cholesky(A)
        rhs = self.Wxy + (c * self.my) @ M
        sol = np.linalg.solve(A, np.concatenate([rhs[..., None], np.broadcast_to(M.T, A.shape[:2] + M.shape[:1])],
                                                axis=2))
        beta, ainv_mt = sol[..., 0], sol[..., 1:]
        rbar = self.my - beta @ M.T
        within = self.yc - beta @ self.Xc.T
        rHr = np.einsum("gi,gi->g", within, within) + np.einsum("gj,gj->g", c, rbar * rbar)
        dof = self.n - self.p
        logdet_a = 2.0 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
        logdet_h = np.log1p(np.multiply.outer(thetas, nj)).sum(axis=1)
        crit = dof * np.log(rHr / dof) + logdet_h + logdet_a
        lev = np.einsum("jp,gpj->gj", M, ainv_mt)
        c2 = c * c
        score = -dof * np.einsum("gj,gj->g", c2, rbar * rbar) / rHr + c.sum(axis=1) - np.einsum("gj,gj->g", c2, lev)
        return crit, score


def _check_rank(X: np.ndarray, columns: list[str]) -> None:
    _, r, piv = qr(X, mode="economic", pivoting=True)
    d = np.abs(np.diag(r))
    tol = d.max() * max(X.shape) * np.finfo(float).eps if d.size else 0
    rank = int((d > tol).sum())
    if rank < X.shape[1]:
        bad = [columns[i] for i in piv[rank:]]
        raise RankDeficientError(f"fixed-effect matrix is rank deficient; collinear columns: {bad}")


def _optimize(mom: _Moments):
    """Return (theta, boundary, unimodal, grid_crit)."""
    thetas = np.exp(_GRID)
    crit_grid, score = mom.evaluate_many(thetas)
    dphi = thetas * score  # d crit / d log(theta)
    candidates: list[tuple[float, float, str | None]] = []
    f0, s0, *_ = mom.evaluate(0.0)
    lo = np.exp(_GRID[0])
    if s0 >= 0:
        candidates.append((f0, 0.0, "lower"))
    elif dphi[0] > 0:
        th = brentq(lambda t: mom.evaluate(t)[1], 0.0, lo, xtol=1e-300, rtol=1e-15)
        candidates.append((mom.evaluate(th)[0], th, None))
    for i in range(_GRID.size - 1):
        if dphi[i] < 0 <= dphi[i + 1]:
            def g(phi):
                th = np.exp(phi)
                return th * mom.evaluate(th)[1]
            phi = brentq(g, _GRID[i], _GRID[i + 1], xtol=1e-14, rtol=4 * np.finfo(float).eps)
            th = float(np.exp(phi))
            candidates.append((mom.evaluate(th)[0], th, None))
    if dphi[-1] < 0:
        candidates.append((crit_grid[-1], float(np.exp(_GRID[-1])), "upper"))
    if not candidates:
        raise LMMError(f"no REML optimum found; criterion trace {crit_grid.tolist()}")
    best = min(candidates, key=lambda c: c[0])
    interior_minima = sum(1 for i in range(1, _GRID.size - 1)
                          if crit_grid[i] < crit_grid[i - 1] and crit_grid[i] < crit_grid[i + 1])
    edge_minima = int(crit_grid[0] < crit_grid[1]) + int(crit_grid[-1] < crit_grid[-2])
    return best[1], best[2], interior_minima + edge_minima <= 1, crit_grid


def fit_reml(design: DesignMatrix, theta: float | None = None, _moments: _Moments | None = None) -> ModelFit:
    """Fit by REML. Passing ``theta`` fixes the variance ratio (``theta=0`` is OLS)."""
    if design.n_groups < 2:
        raise LMMError("need at least 2 groups")
    mom = _moments
    if mom is None:
        _check_rank(design.X, design.columns)
        mom = _Moments(design.X, design.groups, design.n_groups)
    if mom.n <= mom.p:
        raise LMMError("more fixed effects than observations")
    mom.set_response(design.y)
    boundary, unimodal, grid = None, True, None
    if theta is None:
        try:
            theta, boundary, unimodal, grid = _optimize(mom)
        except (ValueError, LinAlgError) as exc:
            raise LMMError(f"REML optimisation failed: {exc}") from exc
    try:
        crit, _, beta, rHr, cf, rbar, c, logdet_h, logdet_a = mom.evaluate(theta)
    except LinAlgError as exc:
        raise LMMError(f"singular GLS system at theta={theta}: {exc}") from exc
    dof = mom.n - mom.p
    sigma2 = float(rHr / dof)
    tau00 = float(theta * sigma2)
    u = theta * c * rbar
    loglik = -0.5 * (dof * (np.log(2 * np.pi * sigma2) + 1.0) + logdet_h + logdet_a)
    cov = sigma2 * cho_solve(cf, np.eye(mom.p))
    var_f = float(np.var(design.X @ beta))
    total = var_f + tau00 + sigma2
    return ModelFit(
        beta=beta, columns=list(design.columns), sigma2=sigma2, tau00=tau00, theta=float(theta),
        intercepts=dict(zip(design.group_levels, u.tolist())),
        icc=icc_from_components(sigma2, tau00),
        r2_marginal=var_f / total, r2_conditional=(var_f + tau00) / total,
        reml_loglik=float(loglik), n_obs=mom.n, n_groups=design.n_groups, cov_beta=cov,
        boundary=boundary, unimodal=unimodal,
        profile=None if grid is None else (_GRID.copy(), grid),
    )


def icc_from_components(sigma2: float, tau00: float) -> float:
    return tau00 / (tau00 + sigma2)


def icc(fit: ModelFit) -> float:
    """Share of residual variance due to the grouping factor."""
    return icc_from_components(fit.sigma2, fit.tau00)


def r2_nakagawa(fit: ModelFit, design: DesignMatrix) -> tuple[float, float]:
    """Marginal and conditional R^2: variance of the fixed-effect predictor
    relative to the total, without and with the random-intercept variance."""
    var_f = float(np.var(design.X @ fit.beta))
    total = var_f + fit.tau00 + fit.sigma2
    return var_f / total, (var_f + fit.tau00) / total


def extract_random_intercepts(fit: ModelFit) -> list[tuple[object, float]]:
    return sorted(fit.intercepts.items(), key=lambda kv: str(kv[0]))
