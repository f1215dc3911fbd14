import numpy as np
import pytest

from typetree import (ConditionError, ErmParams, IrreducibilityError,
                      clt_covariance_critical, clt_covariance_subcritical,
                      limit_fractions_erm, mean_cherries, mean_leaves,
                      moment_report, simulate_urn_ensemble, urn_matrix,
                      var_cherries)
from typetree import erm_analytics as ea
from typetree.erm import default_ball_order

from conftest import random_erm
from oracles import (BALLS, WEIGHTS, enumerate_erm,
                     erm_moments_from_enumeration, exact_urn_mean_cov,
                     simpson_fixed)


class TestMeanLeaves:
    def test_only_mixed_half(self, q_only_mixed):
        for n in (2, 3, 10, 100):
            nu1, nu2 = mean_leaves(q_only_mixed, n, 1, method="recurrence")
            assert nu1 == pytest.approx(n / 2, abs=1e-12)
            assert nu2 == pytest.approx(n / 2, abs=1e-12)

    def test_absorbing_type(self, q_asymmetric):
        for n in (2, 5, 50):
            nu1, _ = mean_leaves(q_asymmetric, n, 1, method="recurrence")
            assert nu1 == pytest.approx(n, abs=1e-10)

    def test_enumeration_oracle_n4(self, q_generic):
        dist = enumerate_erm(q_generic, 4, 1)
        mean_n1, _, _, _ = erm_moments_from_enumeration(dist)
        for method in ("closed_form", "recurrence"):
            nu1, _ = mean_leaves(q_generic, 4, 1, method=method)
            assert nu1 == pytest.approx(mean_n1, abs=1e-12)

    def test_closed_vs_recurrence_random(self, rng):
        for _ in range(100):
            p = random_erm(rng)
            if abs(p.c1 - p.c2 - 2) < 1e-6 or abs(p.c1 - p.c2 + 2) < 1e-6:
                continue
            for n in (10, 100, 1000):
                for init in (1, 2):
                    a = mean_leaves(p, n, init, method="closed_form")[0]
                    b = mean_leaves(p, n, init, method="recurrence")[0]
                    assert abs(a - b) <= 1e-9 * max(1.0, abs(a))

    def test_star_violation_raises(self, q_single_type, q_alternating):
        for p in (q_single_type, q_alternating):
            with pytest.raises(ConditionError, match="recurrence"):
                mean_leaves(p, 10, 1, method="closed_form")
            # auto silently falls back
            nu1, nu2 = mean_leaves(p, 10, 1, method="auto")
            assert nu1 + nu2 == pytest.approx(10)


class TestMeanCherries:
    def test_only_mixed_table(self, q_only_mixed):
        for n in (6, 60, 600):
            mu = mean_cherries(q_only_mixed, n, 1, method="recurrence")
            assert mu[1] == pytest.approx(n / 6, abs=1e-9)   # C1_12
            assert mu[4] == pytest.approx(n / 6, abs=1e-9)   # C2_12
            assert mu[[0, 2, 3, 5]] == pytest.approx(np.zeros(4), abs=1e-12)

    def test_neutral_table(self, q_neutral):
        a, b, c = 0.4, 0.4, 0.2
        c1 = 2 * a + b
        n = 50
        mu = mean_cherries(q_neutral, n, 1)
        assert mu[0] == pytest.approx(n * a * c1 / 6, abs=1e-9)
        assert mu[1] == pytest.approx(n * b * c1 / 6, abs=1e-9)
        assert mu[2] == pytest.approx(n * c * c1 / 6, abs=1e-9)
        # c1' = 2 - c2 = c1 here, and the q2 row mirrors q1
        assert mu[5] == pytest.approx(n * a * c1 / 6, abs=1e-9)

    def test_sum_is_n_over_3(self, rng):
        for _ in range(10):
            p = random_erm(rng)
            mu = mean_cherries(p, 50, 1 + int(rng.integers(2)), method="recurrence")
            assert mu.sum() == pytest.approx(50 / 3, abs=1e-9)

    @pytest.mark.parametrize("n", [3, 4, 5, 6])
    def test_enumeration_oracle(self, q_generic, n):
        for init in (1, 2):
            dist = enumerate_erm(q_generic, n, init)
            _, mu_exp, _, _ = erm_moments_from_enumeration(dist)
            for method in ("closed_form", "recurrence"):
                mu = mean_cherries(q_generic, n, init, method=method)
                assert np.max(np.abs(mu - mu_exp)) <= 1e-12

    def test_asymmetric_constant_type2_cherries(self, q_asymmetric):
        # starting from type 2, the type-2-rooted cherry means converge to
        # constants q2^{j1j2}/2; checked against enumeration at small n
        dist = enumerate_erm(q_asymmetric, 6, 2)
        _, mu_exp, _, _ = erm_moments_from_enumeration(dist)
        mu = mean_cherries(q_asymmetric, 6, 2, method="recurrence")
        assert np.max(np.abs(mu - mu_exp)) <= 1e-12
        mu_big = mean_cherries(q_asymmetric, 400, 2, method="recurrence")
        assert mu_big[0] == pytest.approx(400 / 3 - 0.5, abs=1e-9)     # C1_11
        assert mu_big[4] == pytest.approx(q_asymmetric.prob(2, 1, 2) / 2, abs=1e-9)


class TestVarCherries:
    def test_single_type_classic(self, q_single_type):
        for n in (5, 6, 200):
            s2 = var_cherries(q_single_type, n, 1)
            assert s2[0] == pytest.approx(2 * n / 45, abs=1e-9)
            assert np.max(np.abs(s2[1:])) <= 1e-12

    def test_only_mixed_table(self, q_only_mixed):
        for n in (5, 6, 200):
            s2 = var_cherries(q_only_mixed, n, 1)
            assert s2[1] == pytest.approx(7 * n / 90, abs=1e-9)
            assert s2[4] == pytest.approx(7 * n / 90, abs=1e-9)

    def test_neutral_table(self, q_neutral):
        a, b, c = 0.4, 0.4, 0.2
        c1 = 2 * a + b
        n = 100
        s2 = var_cherries(q_neutral, n, 1)
        assert s2[0] == pytest.approx(n * a * (6 * a ** 2 + 15 * c1 - 8 * a * c1 ** 2) / 90, abs=1e-9)
        assert s2[1] == pytest.approx(n * b * (6 * a * b + 15 * c1 - 8 * b * c1 ** 2) / 90, abs=1e-9)
        assert s2[2] == pytest.approx(n * c * (6 * a * c + 15 * c1 - 8 * c * c1 ** 2) / 90, abs=1e-9)

    def test_alternating_exact_value(self, q_alternating):
        """The exact variance is 25n/252 for n >= 7 (enumeration-checked
        at small n), not the 2n/90 sometimes quoted for this model."""
        dist = enumerate_erm(q_alternating, 6, 1)
        _, _, var_exp, cov = erm_moments_from_enumeration(dist)
        s2 = var_cherries(q_alternating, 6, 1)
        assert np.max(np.abs(s2 - var_exp)) <= 1e-12
        # the two nonzero counts are strongly anti-correlated, not independent
        assert cov[2, 5] < -0.1
        for n in (7, 12, 200):
            s2 = var_cherries(q_alternating, n, 1)
            assert s2[2] == pytest.approx(25 * n / 252, abs=1e-9)
            assert s2[5] == pytest.approx(25 * n / 252, abs=1e-9)

    @pytest.mark.parametrize("n", [5, 6])
    def test_enumeration_oracle(self, rng, n):
        for _ in range(3):
            p = random_erm(rng)
            for init in (1, 2):
                dist = enumerate_erm(p, n, init)
                _, _, var_exp, _ = erm_moments_from_enumeration(dist)
                s2 = var_cherries(p, n, init)
                assert np.max(np.abs(s2 - var_exp)) <= 1e-12

    def test_growth_exponents(self, q_generic, q_critical, q_only_mixed):
        exps = ea.variance_growth_exponents(q_generic)
        d = q_generic.c1 - q_generic.c2
        assert exps == (1.0, d - 1.0, 2 * (d - 1.0))
        assert ea.variance_growth_exponents(q_critical) is None
        assert ea.variance_growth_exponents(q_only_mixed) is None

    def test_moment_report_bundle(self, q_generic):
        rep = moment_report(q_generic, 30, 1)
        assert rep.mu.sum() == pytest.approx(10.0, abs=1e-9)
        assert rep.method == "closed_form"
        d = rep.to_dict()
        assert d["mu"]["C1_11"] == pytest.approx(rep.mu[0])


class TestUrnMatrix:
    def test_spectrum_random(self, rng):
        for _ in range(100):
            p = random_erm(rng)
            spec = urn_matrix(p)
            got = np.sort(spec.eigenvalues.real)
            want = ea.expected_spectrum(p)
            assert np.max(np.abs(got - want)) <= 1e-9
            assert np.max(np.abs(spec.eigenvalues.imag)) <= 1e-9

    def test_left_perron_is_weights(self, rng):
        for _ in range(10):
            p = random_erm(rng)
            spec = urn_matrix(p)
            # a^T A = a^T: each draw adds exactly one unit of weight (leaf)
            assert np.max(np.abs(spec.weights @ spec.A - spec.weights)) <= 1e-12
            cols = spec.A.sum(axis=0)
            assert cols[:6] == pytest.approx(np.full(6, 2.0), abs=1e-12)
            assert cols[6:] == pytest.approx(np.zeros(4), abs=1e-12)

    def test_normalizations(self, q_generic):
        spec = urn_matrix(q_generic)
        assert spec.weights @ spec.v1 == pytest.approx(1.0, abs=1e-12)
        assert spec.u1 @ spec.v1 == pytest.approx(1.0, abs=1e-12)
        assert spec.u2 @ spec.v2 == pytest.approx(1.0, abs=1e-10)
        assert spec.lam2 == pytest.approx(q_generic.c1 - q_generic.c2 - 1, abs=1e-9)

    def test_single_type_restriction_is_2x2(self, q_single_type):
        support = ea.reachable_balls(q_single_type, 1)
        assert list(support) == [BALLS.index((1, 1, 1)), 6 + 0]
        spec = urn_matrix(q_single_type, support=support)
        assert spec.A.shape == (2, 2)
        assert np.allclose(spec.A, [[0.0, 1.0], [2.0, -1.0]])
        assert np.allclose(spec.v1, [1 / 3, 1 / 3])


class TestLimitFractions:
    def test_partition_identity_random(self, rng):
        for _ in range(20):
            p = random_erm(rng)
            lf = limit_fractions_erm(p)
            total = 2 * lf.cherries.sum() + lf.pendants.sum()
            assert total == pytest.approx(1.0, abs=1e-12)

    def test_only_mixed_value(self, q_only_mixed):
        lf = limit_fractions_erm(q_only_mixed, 1)
        order = default_ball_order(2)
        assert lf.v1[order.cherry_pos[(1, 1, 2)]] == pytest.approx(1 / 6, abs=1e-12)
        assert lf.v1[order.cherry_pos[(2, 1, 2)]] == pytest.approx(1 / 6, abs=1e-12)
        assert not lf.irreducible_full

    def test_mean_ratio_converges(self, q_generic):
        # |mu(1e4)/1e4 - v1_cherries| <= 1e-3 via the exact recurrence
        mu = mean_cherries(q_generic, 10_000, 1, method="recurrence")
        lf = limit_fractions_erm(q_generic)
        assert np.max(np.abs(mu / 10_000 - lf.cherries)) <= 1e-3

    def test_asymmetric_is_reducible(self, q_asymmetric):
        with pytest.raises(IrreducibilityError):
            limit_fractions_erm(q_asymmetric, 2)

    def test_closed_form_matches_perron(self, rng):
        for _ in range(20):
            p = random_erm(rng)
            lf = limit_fractions_erm(p)
            assert np.max(np.abs(lf.v1 - ea.v1_closed_form(p))) <= 1e-9


class TestCltCritical:
    def test_cherry_block_pattern(self, q_critical):
        q = q_critical.prob
        C = -8 * (9 + 12 * q(1, 1, 1) ** 2 + 2 * q(2, 1, 1) * q(1, 1, 2)
                  + 4 * q(1, 1, 1) * q(2, 1, 1) + 4 * q(1, 1, 2) ** 2
                  + 14 * q(1, 1, 1) * q(1, 1, 2) - 4 * q(2, 1, 1)
                  - 12 * q(1, 1, 2) - 21 * q(1, 1, 1)) / 25
        g = np.array([q(1, 1, 1), q(1, 1, 2), q(1, 2, 2),
                      -q(2, 2, 2), -q(2, 1, 2), -q(2, 1, 1)])
        sigma = clt_covariance_critical(q_critical)
        assert np.max(np.abs(sigma[:6, :6] - C * np.outer(g, g))) <= 1e-9

    def test_b_matrix_entries_match_display(self, q_critical):
        spec = urn_matrix(q_critical)
        B = ea.clt_b_matrix(q_critical, spec.order, spec.support, spec.v1)
        q = q_critical.prob
        pref = 1.0 / (q_critical.c1 - q_critical.c2 - 2.0)
        b11 = -(q(1, 1, 1) / 3) * (10 * q(2, 1, 1) - 8 * q(1, 1, 1) * q(2, 1, 1)
                                   + 5 * q(2, 1, 2) - 4 * q(1, 1, 1) * q(2, 1, 2))
        b12 = q(1, 1, 1) * (2 * q(2, 1, 1) + q(2, 1, 2)) * q(1, 1, 2)
        assert B[0, 0] == pytest.approx(b11 * pref, abs=1e-9)
        assert B[0, 1] == pytest.approx(b12 * pref, abs=1e-9)

    def test_psd_and_symmetry(self, q_critical):
        sigma = clt_covariance_critical(q_critical)
        assert np.max(np.abs(sigma - sigma.T)) <= 1e-8
        assert np.linalg.eigvalsh(sigma).min() >= -1e-8

    def test_condition_enforced(self, q_generic):
        with pytest.raises(ConditionError, match="3/2"):
            clt_covariance_critical(q_generic)

    def test_matches_exact_variance_growth(self, q_critical):
        """Var(C1_11(n))/(n ln n) from the exact covariance recursion
        approaches Sigma_11 (extrapolated in 1/ln n)."""
        ns = [20_000, 40_000, 80_000]
        ys = []
        for n in ns:
            _, cov = exact_urn_mean_cov(q_critical, n, 1)
            ys.append(cov[0, 0] / (n * np.log(n)))
        X = np.vstack([np.ones(3), 1 / np.log(ns)]).T
        coef, *_ = np.linalg.lstsq(X, np.array(ys), rcond=None)
        sigma = clt_covariance_critical(q_critical)
        assert coef[0] == pytest.approx(sigma[0, 0], rel=0.02)


class TestCltSubcritical:
    def test_single_type_two_state(self, q_single_type):
        sigma = clt_covariance_subcritical(q_single_type, 1)
        i = BALLS.index((1, 1, 1))
        assert sigma[i, i] == pytest.approx(2 / 45, abs=1e-7)

    def test_k1_params(self):
        p1 = ErmParams(1, {1: {(1, 1): 1.0}})
        sigma = clt_covariance_subcritical(p1)
        assert sigma[0, 0] == pytest.approx(2 / 45, abs=1e-7)
        assert sigma[1, 1] == pytest.approx(8 / 45, abs=1e-6)

    def test_matches_exact_covariance(self, q_generic):
        sigma = clt_covariance_subcritical(q_generic, 1)
        n = 200_000
        _, cov = exact_urn_mean_cov(q_generic, n, 1)
        assert np.max(np.abs(cov / n - sigma)) <= 5e-4
        d = np.diag(sigma)
        assert np.max(np.abs(np.diag(cov) / n - d) / d) <= 2e-3

    def test_psd(self, q_generic):
        sigma = clt_covariance_subcritical(q_generic, 1)
        assert np.linalg.eigvalsh((sigma + sigma.T) / 2).min() >= -1e-7

    def test_monte_carlo_variance(self, q_generic):
        steps, reps = 30_000, 4000
        counts = simulate_urn_ensemble(q_generic, steps, reps, 1, seed=99)
        var = counts[:, 0].astype(float).var(ddof=1) / (steps + 2)
        sigma = clt_covariance_subcritical(q_generic, 1)
        assert var == pytest.approx(sigma[0, 0], rel=0.10)

    def test_critical_params_rejected(self, q_critical):
        with pytest.raises(ConditionError, match="< 3/2"):
            clt_covariance_subcritical(q_critical)

    def test_repeated_second_eigenvalue_refused(self, q_neutral):
        # c1 = c2: lam2 = -1 coincides with the double eigenvalue -1
        with pytest.raises(ConditionError, match="repeated"):
            clt_covariance_subcritical(q_neutral, 1)

    def test_integrand_vs_fixed_grid_simpson(self, q_single_type):
        """The adaptive quadrature against a dense fixed-grid Simpson rule
        on the same stable integrand (restricted 2-state urn)."""
        support = ea.reachable_balls(q_single_type, 1)
        spec = urn_matrix(q_single_type, support=support)
        B = ea.clt_b_matrix(q_single_type, spec.order, spec.support, spec.v1)
        P1 = np.outer(spec.v1, spec.weights)
        Icomp = np.eye(2) - P1
        Ad = spec.A - P1

        def f(s):
            psi = ea._psi(s, Ad, P1, Icomp)
            return (psi @ B @ psi.T) * np.exp(-s)

        dense = simpson_fixed(f, 0.0, 60.0, 4001) - np.outer(spec.v1, spec.v1)
        sigma = clt_covariance_subcritical(q_single_type, 1)
        sub = sigma[np.ix_(support, support)]
        assert np.max(np.abs(sub - dense)) <= 1e-6
