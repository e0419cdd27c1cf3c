"""Step definitions, specialization identities, buffer and schedule laws."""

import numpy as np
import pytest

from slimsolve.analysis import ls_solution
from slimsolve.innersolve import Regularizer
from slimsolve.linops import DenseBlockOperator, SampleBlock, augment_with_tikhonov
from slimsolve.sampling import Sampler
from slimsolve.solvers import (
    MemoryBuffer,
    Schedule,
    SolverState,
    block_kaczmarz_step,
    damped_block_kaczmarz_step,
    kaczmarz_step,
    olbfgs_step,
    recursive_ls_step,
    run,
    sg_step,
    slimls_step,
    slimtik_step,
)


def _state(x0, alpha=1.0, r=0, kind="constant", **kw):
    return SolverState.start(np.asarray(x0, float), Schedule(kind, alpha, **kw), r=r)


def _block(a, b, index=1):
    return SampleBlock(index, np.atleast_2d(np.asarray(a, float)),
                       np.atleast_1d(np.asarray(b, float)))


def _consistent_problem(m, n, ell, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((m, n))
    x_star = rng.standard_normal(n)
    return DenseBlockOperator(a, ell, a @ x_star), x_star


class TestSlimLSStep:
    def test_scalar_update(self):
        """A=[2], b=[4], x0=0, alpha=1, r=0: x1 = (1+4)^{-1}*2*4 = 1.6."""
        st = _state([0.0])
        slimls_step(st, _block([[2.0]], [4.0]))
        np.testing.assert_allclose(st.x, [1.6], atol=1e-15)

    def test_fixed_point_of_consistent_system(self):
        op, x_star = _consistent_problem(12, 4, 3, seed=0)
        st = _state(x_star, alpha=0.7)
        slimls_step(st, op.fetch_block(2))
        np.testing.assert_allclose(st.x, x_star, rtol=1e-12, atol=1e-14)

    def test_matches_dense_normal_equation_oracle(self):
        """8x3 Gaussian, M=4, ell=2, r=1, alpha=0.5 against a dense oracle."""
        rng = np.random.default_rng(1)
        a = rng.standard_normal((8, 3))
        b = rng.standard_normal(8)
        op = DenseBlockOperator(a, 2, b)
        st = _state(rng.standard_normal(3), alpha=0.5, r=1)
        seen = []
        for idx in (3, 1, 4):
            x_prev = st.x.copy()
            blk = op.fetch_block(idx)
            seen.append(blk.a_block)
            window = seen[-2:]
            system = np.eye(3) / 0.5
            for mat in window:
                system += mat.T @ mat
            residual = blk.a_block @ x_prev - blk.b_block
            expected = x_prev - np.linalg.solve(
                system, blk.a_block.T @ residual
            )
            slimls_step(st, blk)
            np.testing.assert_allclose(st.x, expected, rtol=1e-10, atol=1e-12)

    def test_inner_routes_agree(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((8, 3))
        b = rng.standard_normal(8)
        op = DenseBlockOperator(a, 2, b)
        x0 = rng.standard_normal(3)
        finals = []
        for inner in ("auto", "direct", "dual", "lsqr"):
            st = _state(x0, alpha=0.5, r=1)
            for idx in (1, 2, 3, 4):
                slimls_step(st, op.fetch_block(idx), inner=inner)
            finals.append(st.x)
        for other in finals[1:]:
            np.testing.assert_allclose(finals[0], other, rtol=1e-9, atol=1e-11)


class TestSgStep:
    def test_single_row(self):
        """row [1,0], b=1, x0=0, alpha=0.5 -> x1 = [0.5, 0]."""
        st = _state([0.0, 0.0], alpha=0.5)
        sg_step(st, _block([[1.0, 0.0]], [1.0]))
        np.testing.assert_array_equal(st.x, [0.5, 0.0])

    def test_zero_residual_leaves_x(self):
        op, x_star = _consistent_problem(6, 3, 2, seed=3)
        st = _state(x_star, alpha=0.3)
        sg_step(st, op.fetch_block(1))
        np.testing.assert_allclose(st.x, x_star, rtol=1e-13)

    def test_matches_formula_oracle(self):
        """Random 10x3 block against an elementwise formula evaluation."""
        rng = np.random.default_rng(4)
        a = rng.standard_normal((10, 3))
        b = rng.standard_normal(10)
        x0 = rng.standard_normal(3)
        alpha = 0.2
        expected = x0.copy()
        grad = np.zeros(3)
        for i in range(10):
            grad += a[i] * (a[i] @ x0 - b[i])
        expected -= alpha * grad
        st = _state(x0, alpha=alpha)
        sg_step(st, _block(a, b))
        np.testing.assert_allclose(st.x, expected, atol=1e-14)


class TestKaczmarzStep:
    def test_projection_onto_hyperplane(self):
        """a=[3,4], b=5, alpha=1: lands exactly on the hyperplane."""
        st = _state([0.0, 0.0])
        kaczmarz_step(st, np.array([3.0, 4.0]), 5.0)
        np.testing.assert_allclose(st.x, [0.6, 0.8], atol=1e-15)
        assert abs(np.array([3.0, 4.0]) @ st.x - 5.0) < 1e-12

    def test_point_on_hyperplane_unmoved(self):
        st = _state([3.0, -1.0])
        kaczmarz_step(st, np.array([1.0, 2.0]), 1.0)
        np.testing.assert_array_equal(st.x, [3.0, -1.0])

    def test_half_relaxation_halves_displacement(self):
        full = _state([0.0, 0.0], alpha=1.0)
        kaczmarz_step(full, np.array([3.0, 4.0]), 5.0)
        half = _state([0.0, 0.0], alpha=0.5)
        kaczmarz_step(half, np.array([3.0, 4.0]), 5.0)
        np.testing.assert_allclose(half.x, full.x / 2, atol=1e-16)

    def test_zero_row_rejected(self):
        st = _state([0.0, 0.0])
        with pytest.raises(ValueError):
            kaczmarz_step(st, np.zeros(2), 1.0)


class TestBlockKaczmarzStep:
    def test_square_full_rank_block_annihilates_residual(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((3, 3)) + 3 * np.eye(3)
        b = rng.standard_normal(3)
        st = _state(rng.standard_normal(3))
        blk = _block(a, b)
        block_kaczmarz_step(st, blk)
        np.testing.assert_allclose(a @ st.x, b, rtol=1e-9, atol=1e-10)

    def test_single_row_block_is_kaczmarz_bit_for_bit(self):
        rng = np.random.default_rng(6)
        row = rng.standard_normal(4)
        entry = rng.standard_normal()
        x0 = rng.standard_normal(4)
        st_a = _state(x0, alpha=0.8)
        block_kaczmarz_step(st_a, _block([row], [entry]))
        st_b = _state(x0, alpha=0.8)
        kaczmarz_step(st_b, row, entry)
        assert np.array_equal(st_a.x, st_b.x)

    def test_rank_deficient_block_matches_svd_pseudoinverse(self):
        """3x5 rank-2 block against an SVD-based pinv oracle."""
        rng = np.random.default_rng(7)
        base = rng.standard_normal((2, 5))
        a = np.vstack([base, 2 * base[0] - base[1]])
        b = rng.standard_normal(3)
        x0 = rng.standard_normal(5)
        st = _state(x0, alpha=1.0)
        block_kaczmarz_step(st, _block(a, b))
        u, s, vt = np.linalg.svd(a)
        rank = int((s > 1e-12 * s[0]).sum())
        pinv = (vt[:rank].T / s[:rank]) @ u[:, :rank].T
        expected = x0 - pinv @ (a @ x0 - b)
        np.testing.assert_allclose(st.x, expected, rtol=1e-10, atol=1e-11)


class TestDampedBlockKaczmarz:
    def test_equals_slimls_with_no_memory(self):
        rng = np.random.default_rng(8)
        a = rng.standard_normal((4, 3))
        b = rng.standard_normal(4)
        x0 = rng.standard_normal(3)
        st_a = _state(x0, alpha=0.4, r=0)
        damped_block_kaczmarz_step(st_a, _block(a, b))
        st_b = _state(x0, alpha=0.4, r=0)
        slimls_step(st_b, _block(a, b))
        assert np.array_equal(st_a.x, st_b.x)

    def test_scalar_matches_slimls_example(self):
        st = _state([0.0])
        damped_block_kaczmarz_step(st, _block([[2.0]], [4.0]))
        np.testing.assert_allclose(st.x, [1.6], atol=1e-15)

    def test_huge_alpha_approaches_undamped_projection(self):
        """alpha = 1e8 within 1e-6 of block Kaczmarz on a benign block."""
        rng = np.random.default_rng(9)
        a = rng.standard_normal((3, 6))
        b = rng.standard_normal(3)
        x0 = rng.standard_normal(6)
        damped = _state(x0, alpha=1e8, r=0)
        damped_block_kaczmarz_step(damped, _block(a, b))
        plain = _state(x0, alpha=1.0)
        block_kaczmarz_step(plain, _block(a, b))
        assert np.linalg.norm(damped.x - plain.x) <= 1e-6 * (
            1 + np.linalg.norm(plain.x)
        )

    def test_memory_state_rejected(self):
        st = _state([0.0, 0.0], r=2)
        with pytest.raises(ValueError):
            damped_block_kaczmarz_step(st, _block([[1.0, 0.0]], [1.0]))


class TestRecursiveLS:
    def test_first_step_is_pinv_solution(self):
        """x1 = A_1^+ b_1 from x0 = 0."""
        rng = np.random.default_rng(10)
        a = rng.standard_normal((3, 5))
        b = rng.standard_normal(3)
        st = _state(np.zeros(5))
        recursive_ls_step(st, _block(a, b))
        np.testing.assert_allclose(
            st.x, np.linalg.pinv(a) @ b, rtol=1e-10, atol=1e-12
        )

    def test_one_epoch_reaches_ls_solution(self):
        """After every block exactly once, x_M = x_LS (40x8 instance)."""
        rng = np.random.default_rng(11)
        a = rng.standard_normal((40, 8))
        b = rng.standard_normal(40)
        op = DenseBlockOperator(a, 5, b)
        traj = run(
            "recursive_ls", op, Sampler("random_cyclic", 8, seed=2),
            Schedule("constant", 1.0), epochs=1,
        )
        x_ls = ls_solution(op, b)
        rel = np.linalg.norm(traj.x_final - x_ls) / np.linalg.norm(x_ls)
        assert rel <= 1e-8

    def test_intermediate_iterates_minimum_norm(self):
        """Each x_k solves the stacked system in the min-norm sense."""
        rng = np.random.default_rng(12)
        a = rng.standard_normal((6, 4))
        b = rng.standard_normal(6)
        op = DenseBlockOperator(a, 2, b)
        st = _state(np.zeros(4))
        seen_rows, seen_rhs = [], []
        for idx in (2, 3, 1):
            blk = op.fetch_block(idx)
            seen_rows.append(blk.a_block)
            seen_rhs.append(blk.b_block)
            recursive_ls_step(st, blk)
            stack = np.vstack(seen_rows)
            rhs = np.concatenate(seen_rhs)
            expected = np.linalg.pinv(stack) @ rhs
            np.testing.assert_allclose(st.x, expected, rtol=1e-10, atol=1e-11)

    def test_nonzero_start_rejected(self):
        st = _state(np.ones(3))
        with pytest.raises(ValueError):
            recursive_ls_step(st, _block([[1.0, 0.0, 0.0]], [1.0]))


class TestOlbfgs:
    def test_empty_memory_equals_sg(self):
        rng = np.random.default_rng(13)
        a = rng.standard_normal((4, 3))
        b = rng.standard_normal(4)
        x0 = rng.standard_normal(3)
        st_a = _state(x0, alpha=0.1)
        olbfgs_step(st_a, _block(a, b))
        st_b = _state(x0, alpha=0.1)
        sg_step(st_b, _block(a, b))
        assert np.array_equal(st_a.x, st_b.x)

    def test_one_pair_matches_two_loop_transcription(self):
        """Second step against a literal two-loop evaluation by hand."""
        rng = np.random.default_rng(14)
        a1 = rng.standard_normal((3, 2))
        b1 = rng.standard_normal(3)
        a2 = rng.standard_normal((3, 2))
        b2 = rng.standard_normal(3)
        x0 = rng.standard_normal(2)
        alpha = 0.05

        st = _state(x0, alpha=alpha)
        olbfgs_step(st, _block(a1, b1))
        x1 = st.x.copy()
        olbfgs_step(st, _block(a2, b2, index=2))

        # oracle: replay the documented recursion directly
        g1 = a1.T @ (a1 @ x0 - b1)
        s1 = -alpha * g1
        y1 = a1.T @ (a1 @ s1)
        rho1 = 1.0 / (s1 @ y1)
        g2 = a2.T @ (a2 @ x1 - b2)
        q = g2.copy()
        coeff = rho1 * (s1 @ q)
        q = q - coeff * y1
        gamma = (s1 @ y1) / (y1 @ y1)
        z = gamma * q
        beta = rho1 * (y1 @ z)
        z = z + (coeff - beta) * s1
        expected = x1 - alpha * z
        np.testing.assert_allclose(st.x, expected, rtol=1e-12, atol=1e-14)

    def test_zero_gradient_leaves_x(self):
        op, x_star = _consistent_problem(6, 3, 2, seed=15)
        st = _state(x_star, alpha=1.0)
        olbfgs_step(st, op.fetch_block(1))
        np.testing.assert_allclose(st.x, x_star, rtol=1e-13)

    def test_memory_limit_respected(self):
        rng = np.random.default_rng(16)
        st = _state(rng.standard_normal(3), alpha=0.01)
        for i in range(8):
            a = rng.standard_normal((4, 3))
            b = rng.standard_normal(4)
            olbfgs_step(st, _block(a, b, index=i + 1), memory=3)
        assert len(st.aux["lbfgs_pairs"]) <= 3


class TestSlimTik:
    def test_lambda_zero_is_slimls(self):
        rng = np.random.default_rng(17)
        a = rng.standard_normal((4, 3))
        b = rng.standard_normal(4)
        x0 = rng.standard_normal(3)
        st_a = _state(x0, alpha=0.5, r=1)
        slimtik_step(st_a, _block(a, b), lam=0.0, n_blocks=4)
        st_b = _state(x0, alpha=0.5, r=1)
        slimls_step(st_b, _block(a, b))
        assert np.array_equal(st_a.x, st_b.x)

    def test_matches_augmented_slimls(self):
        """Tikhonov closed form vs slimls on the augmented system, 12x3."""
        rng = np.random.default_rng(18)
        a = rng.standard_normal((12, 3))
        b = rng.standard_normal(12)
        op = DenseBlockOperator(a, 3, b)
        lam = 0.5
        aug = augment_with_tikhonov(op, lam)
        sampler_a = Sampler("uniform_iid", 4, seed=9)
        sampler_b = Sampler("uniform_iid", 4, seed=9)
        st_tik = _state(np.zeros(3), alpha=1.0, r=1)
        st_aug = _state(np.zeros(3), alpha=1.0, r=1)
        for _ in range(20):
            i = sampler_a.next_index()
            j = sampler_b.next_index()
            assert i == j
            slimtik_step(st_tik, op.fetch_block(i), lam=lam, n_blocks=4)
            slimls_step(st_aug, aug.fetch_block(j))
            np.testing.assert_allclose(
                st_tik.x, st_aug.x, rtol=1e-10, atol=1e-12
            )

    def test_zero_state_zero_block_stays_zero(self):
        st = _state(np.zeros(3), alpha=1.0)
        blk = _block(np.zeros((2, 3)), np.zeros(2))
        slimtik_step(st, blk, lam=0.8, n_blocks=5)
        np.testing.assert_array_equal(st.x, np.zeros(3))


class TestRecursiveRecovery:
    def test_slimls_with_accumulated_regularizer_recovers_recursive_ls(self):
        """C_k = sum of Grams of evicted blocks, alpha = 1, full-rank case."""
        rng = np.random.default_rng(19)
        n, ell, m_blocks = 3, 4, 4
        a = rng.standard_normal((ell * m_blocks, n))
        b = rng.standard_normal(ell * m_blocks)
        op = DenseBlockOperator(a, ell, b)
        r = 1
        order = [2, 4, 1, 3, 2, 1]

        st_rls = _state(np.zeros(n))
        st_slim = _state(np.zeros(n), alpha=1.0, r=r)
        all_grams: list[np.ndarray] = []
        for step_num, idx in enumerate(order, start=1):
            blk = op.fetch_block(idx)
            recursive_ls_step(st_rls, blk)
            # blocks 1..k-r-1 have left the slimls window by step k
            evicted = np.zeros((n, n))
            for g in all_grams[: max(0, step_num - r - 1)]:
                evicted += g
            reg = Regularizer.from_matrix(evicted)
            slimls_step(st_slim, blk, reg, inner="direct")
            all_grams.append(blk.a_block.T @ blk.a_block)
            np.testing.assert_allclose(
                st_slim.x, st_rls.x, rtol=1e-10, atol=1e-11
            )


class TestFixedPoint:
    @pytest.mark.parametrize(
        "method",
        ["slimls", "sg", "kaczmarz", "block_kaczmarz",
         "damped_block_kaczmarz", "olbfgs", "slimtik"],
    )
    def test_ls_solution_is_fixed_point_on_consistent_systems(self, method):
        """Every step leaves the exact solution of a consistent system."""
        ell = 1 if method == "kaczmarz" else 3
        op, x_star = _consistent_problem(12, 4, ell, seed=hash(method) % 100)
        st = _state(x_star, alpha=0.5, r=1 if method in ("slimls", "slimtik")
                    else 0)
        blk = op.fetch_block(2)
        if method == "kaczmarz":
            kaczmarz_step(st, blk.a_block[0], float(blk.b_block[0]))
        elif method == "slimtik":
            # the penalty gradient must vanish too: only lam = 0 keeps
            # x_ls fixed, matching the unregularized problem
            slimtik_step(st, blk, lam=0.0, n_blocks=op.n_blocks)
        else:
            stepper = {
                "slimls": slimls_step,
                "sg": sg_step,
                "block_kaczmarz": block_kaczmarz_step,
                "damped_block_kaczmarz": damped_block_kaczmarz_step,
                "olbfgs": olbfgs_step,
            }[method]
            stepper(st, blk)
        np.testing.assert_allclose(st.x, x_star, rtol=1e-11, atol=1e-13)

    def test_recursive_ls_fixed_point_after_reaching_solution(self):
        """Once recursive LS hits the solution, further steps stay put."""
        op, x_star = _consistent_problem(12, 3, 3, seed=31)
        st = _state(np.zeros(3))
        for idx in (1, 2, 3, 4, 1, 2):
            recursive_ls_step(st, op.fetch_block(idx))
        np.testing.assert_allclose(st.x, x_star, rtol=1e-10, atol=1e-12)


class TestSinglePassRuns:
    def test_second_pass_rejected(self):
        from slimsolve.linops import SinglePassAdapter

        rng = np.random.default_rng(32)
        op = DenseBlockOperator(rng.standard_normal((8, 3)), 2,
                                rng.standard_normal(8))
        stream = SinglePassAdapter(op)
        with pytest.raises(ValueError, match="one epoch"):
            run("slimls", stream, Sampler("cyclic", 4, seed=0),
                Schedule("constant", 1.0), epochs=2)

    def test_noncyclic_sampling_rejected(self):
        from slimsolve.linops import SinglePassAdapter

        rng = np.random.default_rng(33)
        op = DenseBlockOperator(rng.standard_normal((8, 3)), 2,
                                rng.standard_normal(8))
        stream = SinglePassAdapter(op)
        with pytest.raises(ValueError, match="cyclic"):
            run("slimls", stream, Sampler("uniform_iid", 4, seed=0),
                Schedule("constant", 1.0), epochs=1)


class TestBufferAndSchedule:
    def test_buffer_law(self):
        """After k pushes the buffer holds min(k, r+1) blocks, newest last."""
        buf = MemoryBuffer(3)
        blocks = [_block([[float(i), 0.0]], [0.0], index=i) for i in range(1, 6)]
        for k, blk in enumerate(blocks, start=1):
            buf.push(blk)
            assert len(buf) == min(k, 3)
            assert buf.newest().block_index == k
        held = [b.block_index for b in buf.blocks()]
        assert held == [3, 4, 5]

    def test_ramp_schedule_values(self):
        r = 3
        sched = Schedule("ramp", 0.1, ramp_length=r + 1)
        got = [sched.alpha_at(k) for k in range(1, 8)]
        expected = [0.1 * k / 4 for k in range(1, 4)] + [0.1] * 4
        np.testing.assert_allclose(got, expected, rtol=1e-15)
        assert got[r] == 0.1  # exactly alpha at the end of the ramp
        assert all(g == 0.1 for g in got[r:])

    def test_decay_schedule(self):
        sched = Schedule("decay", 2.0, decay_exponent=1.0)
        assert sched.alpha_at(1) == 2.0
        assert sched.alpha_at(4) == 0.5

    def test_bad_schedules_rejected(self):
        with pytest.raises(ValueError):
            Schedule("warmup", 1.0)
        with pytest.raises(ValueError):
            Schedule("constant", -1.0)


class TestTheoryIntegration:
    def test_solver_second_moment_matches_exact_recursion(self):
        """The real solver stack, replicated, reproduces the exact
        second-moment trace of the error within Monte Carlo error."""
        from slimsolve.analysis import moment_recursion, theory_constants

        rng = np.random.default_rng(40)
        a = rng.standard_normal((20, 5))
        b = a @ rng.standard_normal(5) + 0.1 * rng.standard_normal(20)
        op = DenseBlockOperator(a, 4, b)
        alpha = 0.5
        tc = theory_constants(op, b, alpha)
        trace = moment_recursion(op, b, alpha, np.zeros(5), 30, constants=tc)

        reps, checkpoints = 3000, (5, 30)
        sq = {k: [] for k in checkpoints}
        for rep in range(reps):
            traj = run("slimls", op, Sampler("uniform_iid", 5, seed=5000 + rep),
                       Schedule("constant", alpha), epochs=6,
                       store_iterates=True)
            for k in checkpoints:
                err = traj.iterates[k] - tc.x_hat
                sq[k].append(float(err @ err))
        for k in checkpoints:
            vals = np.asarray(sq[k])
            se = vals.std(ddof=1) / np.sqrt(reps)
            assert abs(vals.mean() - trace.second_moment[k]) <= 3 * se, (
                f"k={k}: solver MC {vals.mean():.5e} vs exact "
                f"{trace.second_moment[k]:.5e} +- {se:.1e}"
            )


class TestRun:
    def test_slimtik_through_driver(self):
        rng = np.random.default_rng(41)
        a = rng.standard_normal((12, 3))
        b = rng.standard_normal(12)
        op = DenseBlockOperator(a, 3, b)
        traj = run("slimtik", op, Sampler("uniform_iid", 4, seed=2),
                   Schedule("constant", 1.0), epochs=5, r=1, lam=0.3)
        assert traj.status == "ok"
        assert np.all(np.isfinite(traj.x_final))
    def test_epochs_zero_records_initial_point_only(self):
        rng = np.random.default_rng(20)
        a = rng.standard_normal((6, 3))
        b = rng.standard_normal(6)
        op = DenseBlockOperator(a, 2, b)
        x0 = rng.standard_normal(3)
        traj = run(
            "sg", op, Sampler("cyclic", 3, seed=0), Schedule("constant", 0.1),
            epochs=0, x0=x0, references={"x_true": np.ones(3)},
        )
        assert list(traj.ks) == [0]
        expected = np.linalg.norm(x0 - 1.0) / np.linalg.norm(np.ones(3))
        np.testing.assert_allclose(traj.rel_errors["x_true"][0], expected)

    def test_same_seed_bit_identical(self):
        rng = np.random.default_rng(21)
        a = rng.standard_normal((12, 4))
        b = rng.standard_normal(12)
        op = DenseBlockOperator(a, 3, b)
        kw = dict(epochs=3, r=1, references={"x_true": np.ones(4)},
                  store_iterates=True)
        t1 = run("slimls", op, Sampler("uniform_iid", 4, seed=7),
                 Schedule("constant", 0.5), **kw)
        t2 = run("slimls", op, Sampler("uniform_iid", 4, seed=7),
                 Schedule("constant", 0.5), **kw)
        assert np.array_equal(t1.x_final, t2.x_final)
        assert np.array_equal(t1.rel_errors["x_true"], t2.rel_errors["x_true"])
        assert len(t1.iterates) == len(t1.ks)
        for xa, xb in zip(t1.iterates, t2.iterates):
            assert np.array_equal(xa, xb)
        assert np.array_equal(t1.iterates[-1], t1.x_final)

    def test_divergence_recorded(self):
        rng = np.random.default_rng(22)
        a = 10 * rng.standard_normal((20, 5))
        b = rng.standard_normal(20)
        op = DenseBlockOperator(a, 4, b)
        traj = run("sg", op, Sampler("uniform_iid", 5, seed=1),
                   Schedule("constant", 10.0), epochs=5)
        assert traj.status == "diverged"
        assert traj.diverged_at is not None
        assert traj.row_status[-1] == "diverged"

    def test_kaczmarz_requires_single_rows(self):
        rng = np.random.default_rng(23)
        op = DenseBlockOperator(rng.standard_normal((6, 2)), 2,
                                rng.standard_normal(6))
        with pytest.raises(ValueError):
            run("kaczmarz", op, Sampler("cyclic", 3, seed=0),
                Schedule("constant", 1.0), epochs=1)

    def test_kaczmarz_full_sweep_converges_on_consistent_system(self):
        op, x_star = _consistent_problem(30, 3, 1, seed=24)
        traj = run("kaczmarz", op, Sampler("cyclic", 30, seed=0),
                   Schedule("constant", 1.0), epochs=40)
        assert np.linalg.norm(traj.x_final - x_star) <= 1e-6 * np.linalg.norm(
            x_star
        )
