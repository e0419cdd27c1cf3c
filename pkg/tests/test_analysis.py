"""Exact theory constants, moment recursions, and their oracles."""

import numpy as np
import pytest
import scipy.linalg

from slimsolve.analysis import (
    bias_bound_check,
    structural_inequalities,
    ls_solution,
    moment_recursion,
    stationarity_residual,
    theory_constants,
    theory_report,
    x_hat_alternative,
)
from slimsolve.linops import DenseBlockOperator


def _gaussian(m, n, ell, seed, consistent=False, noise=0.05):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((m, n))
    x_star = rng.standard_normal(n)
    b = a @ x_star
    if not consistent:
        b = b + noise * rng.standard_normal(m) * np.linalg.norm(b) / np.sqrt(m)
    return DenseBlockOperator(a, ell, b), b, x_star


class TestLsSolution:
    def test_identity(self):
        b = np.arange(5.0)
        op = DenseBlockOperator(np.eye(5), 1, b)
        np.testing.assert_allclose(ls_solution(op, b), b, atol=1e-14)

    def test_duplicated_row_averages(self):
        """A = [a; a], b = [1, 3]: the fit is the average, residual [-1, 1]."""
        a = np.array([[2.0, 0.0], [2.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
        b = np.array([1.0, 3.0, 5.0, 5.0])
        op = DenseBlockOperator(a, 2, b)
        x = ls_solution(op, b)
        residual = a @ x - b
        np.testing.assert_allclose(residual[:2], [1.0, -1.0], atol=1e-12)
        np.testing.assert_allclose(x[0], 1.0, atol=1e-13)  # fits the mean 2.0

    def test_matches_qr_oracle(self):
        """Random 30x5 against an explicit QR back-substitution oracle."""
        op, b, _ = _gaussian(30, 5, 5, seed=0)
        a = op.matrix
        q, r = np.linalg.qr(a)
        oracle = scipy.linalg.solve_triangular(r, q.T @ b)
        np.testing.assert_allclose(ls_solution(op, b), oracle, rtol=1e-12,
                                   atol=1e-13)

    def test_rank_deficient_rejected(self):
        a = np.ones((6, 3))
        op = DenseBlockOperator(a, 2, np.ones(6))
        with pytest.raises(ValueError):
            ls_solution(op, np.ones(6))


class TestTheoryConstants:
    def test_identity_partition_closed_form(self):
        """Blocks of I_n give rho = 1 - alpha/(M(1+alpha)) analytically."""
        n, ell = 12, 3
        b = np.arange(float(n))
        op = DenseBlockOperator(np.eye(n), ell, b)
        for alpha in (0.1, 1.0, 7.5):
            tc = theory_constants(op, b, alpha)
            expected = 1.0 - alpha / ((n // ell) * (1.0 + alpha))
            np.testing.assert_allclose(tc.rho, expected, rtol=1e-12)

    def test_consistent_system_fixed_point_is_solution(self):
        op, b, x_star = _gaussian(40, 6, 4, seed=1, consistent=True)
        tc = theory_constants(op, b, 1.0)
        np.testing.assert_allclose(tc.x_hat, x_star, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(tc.x_ls, x_star, rtol=1e-10, atol=1e-12)

    def test_structural_bounds_against_eigendecomposition_oracle(self):
        """100x20, M=10, alpha=1: re-derive the three bounds from eigh."""
        op, b, _ = _gaussian(100, 20, 10, seed=2)
        alpha = 1.0
        tc = theory_constants(op, b, alpha)
        a = op.matrix
        # oracle quantities straight from per-block eigendecompositions
        lam_max = []
        p_bar = np.zeros((20, 20))
        for i in range(10):
            a_i = a[10 * i : 10 * (i + 1)]
            w, v = np.linalg.eigh(a_i.T @ a_i)
            lam_max.append(w[-1])
            p_bar += (v / (1.0 + alpha * w)) @ v.T
        p_bar /= 10
        a_max = max(lam_max)
        np.testing.assert_allclose(tc.a_max, a_max, rtol=1e-10)
        np.testing.assert_allclose(
            tc.rho, np.linalg.eigvalsh(p_bar)[-1], rtol=1e-10
        )
        rows = {r.name: r for r in structural_inequalities(tc)}
        assert rows["mean_step_norm_lt_one"].passed
        assert rows["mean_step_norm_le_bound"].passed
        assert rows["contraction_matrix_spd"].passed
        assert rows["block_product_norm_le_bound"].passed
        assert rows["block_product_norm_le_bound"].rhs == pytest.approx(
            alpha * a_max / (1 + alpha * a_max), rel=1e-12
        )
        assert rows["contraction_eig_lower"].passed
        assert rows["contraction_eig_upper"].passed

    def test_wide_blocks_have_all_zero_min_eigs(self):
        """ell < n means every block Gram is singular: M0 = M, A_min None."""
        op, b, _ = _gaussian(60, 12, 10, seed=3)
        tc = theory_constants(op, b, 1.0)
        assert tc.m_zero == 6
        assert tc.a_min is None
        assert tc.rho < 1.0
        assert all(r.passed for r in structural_inequalities(tc))


class TestXHatDefinitions:
    def test_two_definitions_agree(self):
        op, b, _ = _gaussian(60, 8, 6, seed=4)
        for alpha in (0.05, 1.0, 20.0):
            tc = theory_constants(op, b, alpha)
            alt = x_hat_alternative(tc, op, b)
            scale = max(1.0, np.linalg.norm(tc.x_hat))
            assert np.linalg.norm(alt - tc.x_hat) <= 1e-10 * scale


class TestStationarity:
    def test_fixed_point_residual_vanishes(self):
        op, b, _ = _gaussian(50, 10, 5, seed=5)
        tc = theory_constants(op, b, 0.7)
        assert stationarity_residual(tc, op, b) <= 1e-10 * np.linalg.norm(b)

    def test_consistent_system_near_zero(self):
        op, b, _ = _gaussian(30, 5, 5, seed=6, consistent=True)
        tc = theory_constants(op, b, 1.0)
        assert stationarity_residual(tc, op, b) <= 1e-12 * np.linalg.norm(b)

    def test_perturbation_responds_linearly(self):
        """At x_hat + delta the drift norm equals ||B delta||."""
        op, b, _ = _gaussian(30, 5, 5, seed=7)
        tc = theory_constants(op, b, 1.0)
        rng = np.random.default_rng(8)
        delta = rng.standard_normal(5)
        got = stationarity_residual(tc, op, b, x=tc.x_hat + delta)
        expected = np.linalg.norm(tc.B_bar @ delta)
        np.testing.assert_allclose(got, expected, rtol=1e-8, atol=1e-12)
        assert got > 0


class TestMomentRecursion:
    def test_consistent_start_at_solution_stays_zero(self):
        op, b, x_star = _gaussian(24, 4, 3, seed=9, consistent=True)
        trace = moment_recursion(op, b, 1.0, x_star, 30)
        assert np.all(trace.mean_gap <= 1e-12)
        assert np.all(trace.second_moment <= 1e-24)

    def test_first_moment_contraction_bound(self):
        """||E x_k - x_hat|| <= rho^k ||x_0 - x_hat|| for all k."""
        op, b, _ = _gaussian(60, 10, 6, seed=10)
        for alpha in (0.1, 1.0, 10.0):
            tc = theory_constants(op, b, alpha)
            trace = moment_recursion(op, b, alpha, np.zeros(10), 120,
                                     constants=tc)
            bound = trace.first_moment_bound(tc)
            assert np.all(trace.mean_gap <= bound * (1 + 1e-12) + 1e-300)

    def test_second_moment_matches_monte_carlo(self):
        """Exact trace recursion vs 1e4-replicate simulation, 3 SEs."""
        m, n, ell, big_m = 20, 5, 4, 5
        op, b, _ = _gaussian(m, n, ell, seed=11)
        alpha = 0.5
        tc = theory_constants(op, b, alpha)
        ks = (1, 10, 50)
        trace = moment_recursion(op, b, alpha, np.zeros(n), max(ks),
                                 constants=tc)

        # independent oracle: simulate the actual iteration in batch
        reps = 10_000
        rng = np.random.default_rng(12)
        a = op.matrix
        systems = []
        for i in range(big_m):
            a_i = a[ell * i : ell * (i + 1)]
            systems.append(
                (a_i, b[ell * i : ell * (i + 1)],
                 np.eye(ell) + alpha * (a_i @ a_i.T))
            )
        x = np.zeros((reps, n))
        errs = {}
        for k in range(1, max(ks) + 1):
            draws = rng.integers(0, big_m, size=reps)
            for i in range(big_m):
                mask = draws == i
                if not mask.any():
                    continue
                a_i, b_i, sys_i = systems[i]
                resid = x[mask] @ a_i.T - b_i
                w = np.linalg.solve(sys_i, resid.T).T
                x[mask] = x[mask] - alpha * (w @ a_i)
            if k in ks:
                sq = np.sum((x - tc.x_hat) ** 2, axis=1)
                errs[k] = (sq.mean(), sq.std(ddof=1) / np.sqrt(reps))
        for k in ks:
            mean, se = errs[k]
            assert abs(trace.second_moment[k] - mean) <= 3 * se, (
                f"k={k}: exact {trace.second_moment[k]:.6e} vs "
                f"MC {mean:.6e} +- {se:.2e}"
            )

    def test_second_moment_horizon_bound(self):
        op, b, _ = _gaussian(60, 10, 6, seed=13)
        for alpha in (0.1, 1.0):
            tc = theory_constants(op, b, alpha)
            trace = moment_recursion(op, b, alpha, np.zeros(10), 150,
                                     constants=tc)
            bound = trace.second_moment_bound(tc)
            assert np.all(trace.second_moment <= bound * (1 + 1e-10))

    def test_horizon_shrinks_with_alpha(self):
        op, b, _ = _gaussian(40, 8, 4, seed=14)
        horizons = [
            theory_constants(op, b, alpha).horizon
            for alpha in (10.0, 1.0, 0.1, 0.01, 0.001)
        ]
        assert all(h2 < h1 for h1, h2 in zip(horizons, horizons[1:]))
        assert horizons[-1] < 1e-6 * horizons[0]

    def test_workload_guard(self):
        op, b, _ = _gaussian(40, 8, 4, seed=15)
        with pytest.raises(ValueError):
            moment_recursion(op, b, 1.0, np.zeros(8), 10**12)


class TestBiasBound:
    def test_consistent_system_zero_bias_zero_bound(self):
        op, b, _ = _gaussian(40, 6, 4, seed=16, consistent=True)
        tc = theory_constants(op, b, 1.0)
        rep = bias_bound_check(tc, op, b)
        assert rep.actual <= 1e-10
        assert rep.bound <= 1e-8  # ||Q_A b|| is numerically zero
        assert rep.passed

    def test_bound_holds_across_alpha_grid(self):
        """Inconsistent instances: bound holds at every alpha."""
        for seed in range(5):
            op, b, _ = _gaussian(100, 20, 10, seed=17 + seed)
            for alpha in (1e-3, 1e-2, 1e-1, 1.0, 10.0):
                tc = theory_constants(op, b, alpha)
                rep = bias_bound_check(tc, op, b)
                assert rep.passed, (
                    f"seed {seed}, alpha {alpha}: {rep.actual} > {rep.bound}"
                )

    def test_small_alpha_shrinks_bias_linearly(self):
        """The bias scales like alpha * ||Q_A b||, so it falls toward 0
        as alpha -> 0; the absolute floor is set by the inconsistency."""
        op, b, _ = _gaussian(100, 20, 10, seed=22)
        rels = []
        for alpha in (10.0, 1.0, 1e-1, 1e-2, 1e-3):
            tc = theory_constants(op, b, alpha)
            rels.append(bias_bound_check(tc, op, b).rel_to_xls)
        assert all(r2 < r1 for r1, r2 in zip(rels, rels[1:]))
        assert rels[-1] < 0.05 * rels[0]

    def test_near_consistent_instance_reaches_numerical_floor(self):
        """With tiny inconsistency, alpha = 1e-3 puts the bias below 1e-8."""
        op, b, _ = _gaussian(60, 12, 10, seed=23, noise=1e-6)
        tc = theory_constants(op, b, 1e-3)
        assert bias_bound_check(tc, op, b).rel_to_xls <= 1e-8


class TestTheoryReport:
    def test_all_checks_pass_on_benign_instance(self):
        op, b, _ = _gaussian(40, 8, 4, seed=23)
        rows = theory_report(op, b, alphas=(0.1, 1.0), k_max=40)
        failures = [r for r in rows if not r["passed"]]
        assert failures == []
        names = {r["check"] for r in rows}
        assert "inequality:block_product_norm_le_bound" in names
        assert "second_moment_horizon" in names
