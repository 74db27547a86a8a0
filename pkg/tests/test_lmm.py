import json

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from movement_rhythms.lmm import (CollinearityError, DesignError, RankDeficientError, build_design,
                                  design_from_arrays, extract_random_intercepts, fit_reml, fit_summary, gvif,
                                  gvif_from_matrix, icc_from_components, markdown_table, parametric_bootstrap,
                                  parse_formula, r2_nakagawa, to_json)


def one_way(values_by_group):
    y = np.concatenate(values_by_group)
    g = np.concatenate([[j] * len(v) for j, v in enumerate(values_by_group)])
    return design_from_arrays(y, np.ones((y.size, 1)), g)


def anova(y, J, n):
    """Closed-form REML estimates for a balanced one-way layout."""
    y = y.reshape(J, n)
    means = y.mean(axis=1)
    msw = ((y - means[:, None]) ** 2).sum() / (J * (n - 1))
    msb = n * ((means - y.mean()) ** 2).sum() / (J - 1)
    tau = max(0.0, (msb - msw) / n)
    sigma2 = msw if msb >= msw else ((y - y.mean()) ** 2).sum() / (J * n - 1)
    return y.mean(), sigma2, tau


class TestReml:
    def test_two_group_example(self):
        fit = fit_reml(one_way([[1.0, 1.2], [2.0, 2.2]]))
        assert fit.beta[0] == pytest.approx(1.6, abs=1e-9)
        assert fit.sigma2 == pytest.approx(0.02, abs=1e-9)
        assert fit.tau00 == pytest.approx(0.49, abs=1e-9)
        u = dict(extract_random_intercepts(fit))
        assert u[0] == pytest.approx(-u[1], abs=1e-12) and sum(u.values()) == pytest.approx(0, abs=1e-12)

    def test_random_balanced_designs_match_anova(self, rng):
        for _ in range(30):
            J, n = rng.integers(3, 21), rng.integers(2, 11)
            y = rng.normal(size=J)[:, None] * rng.uniform(0, 2) + rng.normal(size=(J, n)) + 5
            b0, s2, tau = anova(y.ravel(), J, n)
            fit = fit_reml(design_from_arrays(y.ravel(), np.ones((J * n, 1)), np.repeat(np.arange(J), n)))
            assert fit.beta[0] == pytest.approx(b0, abs=1e-6)
            assert fit.sigma2 == pytest.approx(s2, abs=1e-6)
            assert fit.tau00 == pytest.approx(tau, abs=1e-6)

    def test_boundary_when_groups_identical(self):
        fit = fit_reml(one_way([[1.0, 2.0, 3.0]] * 4))
        assert fit.tau00 == 0 and fit.boundary == "lower"
        assert all(v == 0 for v in fit.intercepts.values())

    def test_theta_zero_is_ols(self, rng):
        X = np.column_stack([np.ones(60), rng.normal(size=(60, 2))])
        y = X @ [1, 2, -1] + rng.normal(size=60)
        g = np.repeat(np.arange(6), 10)
        fit = fit_reml(design_from_arrays(y, X, g), theta=0.0)
        np.testing.assert_allclose(fit.beta, np.linalg.lstsq(X, y, rcond=None)[0], atol=1e-10)
        assert fit.tau00 == 0 and all(v == 0 for v in fit.intercepts.values())

    def test_duplicated_rows_keep_beta_where_weights_allow(self, rng):
        # doubling group sizes changes the GLS weights, so beta is only
        # invariant at theta = 0 and for the balanced grand mean
        J, n = 8, 4
        X = np.column_stack([np.ones(J * n), rng.normal(size=J * n)])
        g = np.repeat(np.arange(J), n)
        y = X @ [1.0, 0.5] + rng.normal(size=J)[g] + rng.normal(size=J * n)
        a = fit_reml(design_from_arrays(y, X, g), theta=0.0)
        b = fit_reml(design_from_arrays(np.tile(y, 2), np.tile(X, (2, 1)), np.tile(g, 2)), theta=0.0)
        np.testing.assert_allclose(a.beta, b.beta, atol=1e-9)
        a = fit_reml(design_from_arrays(y, X[:, :1], g))
        b = fit_reml(design_from_arrays(np.tile(y, 2), X[:, :1].repeat(2, axis=0), np.tile(g, 2)))
        assert a.beta[0] == pytest.approx(b.beta[0], abs=1e-9)

    def test_duplicated_one_way_matches_its_own_anova(self):
        vals = [[1.0, 1.2], [2.0, 2.2], [1.5, 1.9]]
        dup = [v * 2 for v in vals]
        fit = fit_reml(one_way(dup))
        b0, s2, tau = anova(np.concatenate(dup), 3, 4)
        assert (fit.beta[0], fit.sigma2, fit.tau00) == pytest.approx((b0, s2, tau), abs=1e-9)

    def test_shift_invariance(self, rng):
        X = np.column_stack([np.ones(50), rng.normal(size=(50, 2))])
        g = np.repeat(np.arange(10), 5)
        y = X @ [0.0, 1.0, 2.0] + rng.normal(size=10)[g] + rng.normal(size=50)
        a = fit_reml(design_from_arrays(y, X, g))
        b = fit_reml(design_from_arrays(y + 7.5, X, g))
        np.testing.assert_allclose(b.beta[1:], a.beta[1:], atol=1e-9)
        assert b.beta[0] == pytest.approx(a.beta[0] + 7.5, abs=1e-9)

    def test_rank_deficiency_names_columns(self, rng):
        x = rng.normal(size=20)
        X = np.column_stack([np.ones(20), x, 2 * x])
        with pytest.raises(RankDeficientError, match="x2|x1"):
            fit_reml(design_from_arrays(rng.normal(size=20), X, np.arange(20) % 4))

    def test_profile_monitoring(self, rng):
        g = np.repeat(np.arange(12), 6)
        y = rng.normal(size=12)[g] + rng.normal(size=72)
        fit = fit_reml(design_from_arrays(y, np.ones((72, 1)), g))
        assert fit.unimodal
        grid, crit = fit.profile
        assert grid.size == crit.size
        assert crit[0] > crit.min() and crit[-1] > crit.min()

    def test_variance_recovery(self):
        """50 groups x 10 obs, 200 seeds: relative bias of sigma2 and tau00 under 10%."""
        J, n, sigma2, tau = 50, 10, 1.0, 0.5
        g = np.repeat(np.arange(J), n)
        X = np.column_stack([np.ones(J * n), np.tile(np.linspace(-1, 1, n), J)])
        est = []
        for seed in range(200):
            r = np.random.default_rng(seed)
            y = X @ [2.0, 1.0] + r.normal(0, np.sqrt(tau), J)[g] + r.normal(0, 1, J * n)
            f = fit_reml(design_from_arrays(y, X, g))
            est.append((f.sigma2, f.tau00))
        s_hat, t_hat = np.mean(est, axis=0)
        assert abs(s_hat / sigma2 - 1) < 0.10 and abs(t_hat / tau - 1) < 0.10


class TestSummaries:
    @pytest.mark.parametrize("s2,tau,expected", [(0.74, 0.25, 0.2525), (0.34, 0.61, 0.6421)])
    def test_icc(self, s2, tau, expected):
        assert round(icc_from_components(s2, tau), 4) == expected

    def test_r2(self, rng):
        fit = fit_reml(one_way([[1.0, 1.2], [2.0, 2.2], [0.5, 0.8]]))
        d = one_way([[1.0, 1.2], [2.0, 2.2], [0.5, 0.8]])
        assert r2_nakagawa(fit, d)[0] == 0
        X = np.column_stack([np.ones(40), rng.normal(size=40)])
        g = np.arange(40) % 5
        d = design_from_arrays(X @ [0, 1] + rng.normal(size=5)[g] + rng.normal(size=40), X, g)
        fit = fit_reml(d)
        m, c = r2_nakagawa(fit, d)
        assert 0 <= m <= c <= 1 and (m, c) == (fit.r2_marginal, fit.r2_conditional)
        assert 0 <= fit.icc < 1


class TestGvif:
    def test_orthogonal(self):
        a = np.array([1, -1, 1, -1, 1, -1, 1, -1.0])
        b = np.array([1, 1, -1, -1, 1, 1, -1, -1.0])
        c = np.array([1, 1, 1, 1, -1, -1, -1, -1.0])
        X = np.column_stack([np.ones(8), a, b, c])
        out = gvif_from_matrix(X, {"a": [1], "b": [2], "c": [3]})
        assert all(g.gvif == pytest.approx(1.0) for g in out)

    def test_two_predictors_correlated(self):
        z1 = np.array([1, -1, 1, -1, 1, -1, 1, -1.0])
        z2 = np.array([1, 1, -1, -1, 1, 1, -1, -1.0])
        x2 = 0.6 * z1 + 0.8 * z2  # correlation 0.6 with z1
        out = gvif_from_matrix(np.column_stack([np.ones(8), z1, x2]), {"a": [1], "b": [2]})
        assert [g.gvif for g in out] == pytest.approx([1.5625, 1.5625])

    def test_duplicate_column(self, rng):
        x = rng.normal(size=10)
        with pytest.raises(CollinearityError):
            gvif_from_matrix(np.column_stack([np.ones(10), x, x]), {"a": [1], "b": [2]})

    def test_multi_df_term_and_flag(self, rng):
        x = rng.normal(size=200)
        X = np.column_stack([np.ones(200), x, x + 0.05 * rng.normal(size=200), rng.normal(size=200)])
        out = {g.term: g for g in gvif_from_matrix(X, {"a": [1], "bc": [2, 3]})}
        assert out["bc"].df == 2 and out["a"].flagged
        assert out["a"].adjusted == pytest.approx(np.sqrt(out["a"].gvif))


def _frame(rng, n_groups=12, per=6):
    n = n_groups * per
    return pd.DataFrame({
        "participant": np.repeat([f"p{i:02d}" for i in range(n_groups)], per),
        "y": rng.normal(size=n),
        "gender": rng.choice(["female", "male"], n),
        "role": rng.choice(["academic", "service"], n),
        "has_children": rng.random(n) < 0.5,
        "age": rng.integers(0, 3, n),
    })


class TestDesign:
    def test_parse_formula(self):
        spec = parse_formula("y ~ a*b + c, group = g")
        assert spec.fixed_terms == ("a", "b", "c", "a:b") and spec.grouping == "g"
        with pytest.raises(DesignError):
            parse_formula("y ~ a + a:b, group = g")
        with pytest.raises(DesignError):
            parse_formula("y ~ a")

    def test_coding(self):
        data = pd.DataFrame({"g": ["1", "1", "2"], "y": [1.0, 2.0, 4.0], "f": ["a", "b", "a"],
                             "x": [1.0, 2.0, 3.0], "d1": [False, True, True], "d2": [True, True, False]})
        d = build_design(parse_formula("y ~ f + x + d1 + d2 + d1:d2, group = g"), data)
        col = dict(zip(d.columns, d.X.T))
        np.testing.assert_array_equal(col["f[b]"], [0, 1, 0])
        np.testing.assert_allclose(col["x"], [-1, 0, 1])
        np.testing.assert_array_equal(col["d1[yes]:d2[yes]"], [0, 1, 0])
        assert abs(d.y.mean()) < 1e-12

    def test_reference_levels_and_dropped_rows(self, rng):
        data = _frame(rng)
        data.loc[3, "y"] = np.nan
        d = build_design(parse_formula("y ~ gender + role + has_children + gender:has_children, group = participant"), data)
        assert d.columns == ["(Intercept)", "gender[male]", "role[service]", "has_children[yes]",
                             "gender[male]:has_children[yes]"]
        assert d.n_dropped == 1 and d.n_obs == len(data) - 1

    def test_single_group_rejected(self, rng):
        data = _frame(rng).assign(participant="same")
        with pytest.raises(DesignError):
            build_design(parse_formula("y ~ age, group = participant"), data)


class TestBootstrap:
    def _setup(self, rng):
        data = _frame(rng)
        d = build_design(parse_formula("y ~ gender + age, group = participant"), data)
        return fit_reml(d), d

    def test_deterministic_and_worker_independent(self, rng):
        fit, d = self._setup(rng)
        a = parametric_bootstrap(fit, d, 120, seed=4)
        b = parametric_bootstrap(fit, d, 120, seed=4)
        c = parametric_bootstrap(fit, d, 120, seed=4, workers=2)
        np.testing.assert_array_equal(a.draws, b.draws)
        np.testing.assert_array_equal(a.draws, c.draws)
        assert not np.array_equal(a.draws, parametric_bootstrap(fit, d, 120, seed=5).draws)

    def test_interval_contains_estimate(self, rng):
        fit, d = self._setup(rng)
        b = parametric_bootstrap(fit, d, 200, seed=1)
        assert np.all(b.ci_lower <= b.estimate) and np.all(b.estimate <= b.ci_upper)
        assert np.all((0 <= b.p_values) & (b.p_values <= 1))

    def test_needs_100_replicates(self, rng):
        fit, d = self._setup(rng)
        with pytest.raises(ValueError):
            parametric_bootstrap(fit, d, 50)

    def test_report(self, rng):
        fit, d = self._setup(rng)
        boot = parametric_bootstrap(fit, d, 100, seed=0)
        summary = fit_summary(fit, d, boot, gvif(d), name="Model test")
        assert json.loads(to_json(summary))["n_groups"] == 12
        md = markdown_table(summary)
        for label in ("σ²", "τ00 (participant)", "ICC", "N (participant)", "Observations", "Marginal R²", "95% CI"):
            assert label in md


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 8), st.integers(2, 6), st.integers(0, 10**6))
def test_fit_invariants(J, n, seed):
    r = np.random.default_rng(seed)
    y = r.normal(size=J)[np.repeat(np.arange(J), n)] * r.uniform(0, 3) + r.normal(size=J * n)
    fit = fit_reml(design_from_arrays(y, np.ones((J * n, 1)), np.repeat(np.arange(J), n)))
    assert fit.sigma2 > 0 and fit.tau00 >= 0 and 0 <= fit.icc < 1
    assert fit.r2_marginal <= fit.r2_conditional <= 1
