"""Exact desk-scale evaluation of the convergence theory.

For the memoryless damped iteration with constant damping alpha and
identity C fixed here, define per block i (uniform over the M
partition blocks)

    G_i = A_i^T A_i,   B_i = alpha (I + alpha G_i)^{-1},

and the exact expectations

    P = E B_k / alpha = (1/M) sum_i (I + alpha G_i)^{-1},
    B = E B_k G_k     = I - P.

The expected iteration has fixed point

    x_hat = B^{-1} E B_k A_k^T b_k,

and the mean error contracts like ||E x_k - x_hat|| <= rho^k with
rho = ||P||_2 < 1, while the mean squared error obeys

    E ||x_k - x_hat||^2 <= (1 - 2c)^k ||x_0 - x_hat||^2
                           + alpha^2 sigma^2 / c,

with c = lambda_min(B) / (1 + alpha A_max) and
sigma = E ||A_k^T (A_k x_hat - b_k)||.  All expectations over the
finite uniform distribution are computed as exact averages over the M
blocks, so these statements can be validated without Monte Carlo
error; Monte Carlo appears only as a cross-check oracle in the tests.

Everything here is desk-scale by design: dense n-by-n algebra, guarded
at n <= 2000.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

DESK_MAX_N = 2000
COND_LIMIT = 1e12
ZERO_EIG_REL_TOL = 1e-10
MOMENT_WORK_LIMIT = 5e10


def _dense_system(op, b) -> tuple[np.ndarray, np.ndarray]:
    if op.n_cols > DESK_MAX_N:
        raise ValueError(
            f"analysis is desk-scale only (n <= {DESK_MAX_N}), got n = {op.n_cols}"
        )
    if hasattr(op, "matrix"):
        a = np.asarray(op.matrix, dtype=float)
    else:
        a = np.vstack([blk.a_block for blk in op.blocks()])
    b = np.asarray(b, dtype=float).reshape(-1)
    if b.shape[0] != a.shape[0]:
        raise ValueError("b length does not match the operator row count")
    return a, b


def ls_solution(op, b) -> np.ndarray:
    """Least-squares solution of the full system via SVD factorization.

    Requires full column rank: a condition estimate above 1e12 is
    rejected.
    """
    a, b = _dense_system(op, b)
    svals = scipy.linalg.svdvals(a)
    if svals[-1] == 0 or svals[0] / svals[-1] > COND_LIMIT:
        raise ValueError(
            "matrix is rank deficient (condition estimate above 1e12); "
            "the LS solution is not unique"
        )
    x, *_ = scipy.linalg.lstsq(a, b)
    return x


@dataclass
class TheoryConstants:
    """All quantities needed to evaluate the convergence statements."""

    alpha: float
    x_ls: np.ndarray
    x_hat: np.ndarray
    B_bar: np.ndarray  # B = E B_k A_k^T A_k
    EBk_over_alpha: np.ndarray  # P = E B_k / alpha
    rho: float  # ||P||_2
    a_min: float | None  # smallest positive block-Gram eigenvalue, None if all zero
    a_max: float  # largest block-Gram eigenvalue
    m_zero: int  # number of blocks with lambda_min(G_i) = 0
    c: float  # lambda_min(B) / (1 + alpha A_max)
    sigma: float  # E ||A_k^T (A_k x_hat - b_k)||
    sigma_sq_mean: float  # E ||A_k^T (A_k x_hat - b_k)||^2 (proof-form horizon)
    bias_bound: float  # right-hand side of the fixed-point bias bound
    bias_bound_exact_binv: bool  # True if the exact-||B^{-1}|| form was used
    c_const: float  # E||A_k^T W_k|| + ||(A^T A)^{-1}|| ||A|| E||A_k^T A_k||
    lambda_min_b: float
    lambda_max_b: float
    q_a_b_norm: float  # ||Q_A b||, residual component outside range(A)
    blocks_b: list = field(repr=False, default_factory=list)  # B_i per block
    blocks_g: list = field(repr=False, default_factory=list)  # G_i per block
    blocks_d: list = field(repr=False, default_factory=list)  # -B_i A_i^T(A_i x_hat - b_i)

    @property
    def horizon(self) -> float:
        """Steady-state bound alpha^2 sigma^2 / c."""
        return self.alpha**2 * self.sigma**2 / self.c


def theory_constants(op, b, alpha: float) -> TheoryConstants:
    """Compute every constant exactly (uniform average over the M blocks)."""
    if not alpha > 0:
        raise ValueError("alpha must be > 0")
    a, b = _dense_system(op, b)
    m, n = a.shape
    big_m = op.n_blocks
    ell = op.block_rows
    x_ls = ls_solution(op, b)

    eye = np.eye(n)
    p_bar = np.zeros((n, n))
    mean_grad = np.zeros(n)  # E B_k A_k^T b_k
    blocks_b, blocks_g = [], []
    lam_mins, lam_maxs, spec_norms = [], [], []
    blocks_a, blocks_rhs = [], []
    for i in range(big_m):
        a_i = a[i * ell : (i + 1) * ell]
        b_i = b[i * ell : (i + 1) * ell]
        g_i = a_i.T @ a_i
        w = np.linalg.eigvalsh(g_i)
        lam_mins.append(w[0])
        lam_maxs.append(w[-1])
        spec_norms.append(np.sqrt(max(w[-1], 0.0)))
        b_i_mat = alpha * np.linalg.inv(eye + alpha * g_i)
        p_bar += b_i_mat / alpha
        mean_grad += b_i_mat @ (a_i.T @ b_i)
        blocks_b.append(b_i_mat)
        blocks_g.append(g_i)
        blocks_a.append(a_i)
        blocks_rhs.append(b_i)
    p_bar /= big_m
    mean_grad /= big_m
    b_bar = eye - p_bar

    a_max = max(lam_maxs)
    zero_tol = ZERO_EIG_REL_TOL * max(a_max, 1.0)
    positive = [w for w in lam_mins if w > zero_tol]
    m_zero = big_m - len(positive)
    a_min = min(positive) if positive else None

    w_b = np.linalg.eigvalsh(b_bar)
    lambda_min_b, lambda_max_b = float(w_b[0]), float(w_b[-1])
    rho = float(np.linalg.norm(p_bar, 2))
    c = lambda_min_b / (1.0 + alpha * a_max)
    # type invariants, guaranteed for full-column-rank systems; a trip
    # here means the instance is numerically degenerate for this alpha
    if not (rho < 1.0 and 0.0 < c < 0.5 and lambda_min_b > 0.0):
        raise ValueError(
            f"degenerate constants at alpha={alpha:g}: rho={rho!r}, "
            f"c={c!r}, lambda_min(B)={lambda_min_b!r}"
        )

    x_hat = np.linalg.solve(b_bar, mean_grad)

    # sigma and the per-block drift terms at the fixed point
    norms, sq_norms, blocks_d = [], [], []
    for a_i, b_i, b_i_mat in zip(blocks_a, blocks_rhs, blocks_b):
        grad_i = a_i.T @ (a_i @ x_hat - b_i)
        norms.append(np.linalg.norm(grad_i))
        sq_norms.append(float(grad_i @ grad_i))
        blocks_d.append(-b_i_mat @ grad_i)
    sigma = float(np.mean(norms))
    sigma_sq_mean = float(np.mean(sq_norms))

    # bias-bound ingredients
    gram = a.T @ a
    gram_inv_norm = 1.0 / float(np.linalg.eigvalsh(gram)[0])
    a_norm = float(np.linalg.norm(a, 2))
    c_const = float(np.mean(spec_norms)) + gram_inv_norm * a_norm * float(
        np.mean(lam_maxs)
    )
    q_a_b = b - a @ np.linalg.solve(gram, a.T @ b)
    q_a_b_norm = float(np.linalg.norm(q_a_b))

    lead = alpha**2 * a_max / (1.0 + alpha * a_max)
    if a_min is not None:
        # ||B^{-1}|| <= M (1 + alpha A_min) / (alpha A_min)
        binv_bound = big_m * (1.0 + alpha * a_min) / (alpha * a_min)
        bias_bound = lead * binv_bound * c_const * q_a_b_norm
        exact_binv = False
    else:
        # every block Gram is singular: the closed-form ||B^{-1}|| bound
        # degenerates, so fall back to the exact 1 / lambda_min(B)
        bias_bound = lead / lambda_min_b * c_const * q_a_b_norm
        exact_binv = True

    return TheoryConstants(
        alpha=alpha,
        x_ls=x_ls,
        x_hat=x_hat,
        B_bar=b_bar,
        EBk_over_alpha=p_bar,
        rho=rho,
        a_min=a_min,
        a_max=float(a_max),
        m_zero=m_zero,
        c=float(c),
        sigma=sigma,
        sigma_sq_mean=sigma_sq_mean,
        bias_bound=float(bias_bound),
        bias_bound_exact_binv=exact_binv,
        c_const=c_const,
        lambda_min_b=lambda_min_b,
        lambda_max_b=lambda_max_b,
        q_a_b_norm=q_a_b_norm,
        blocks_b=blocks_b,
        blocks_g=blocks_g,
        blocks_d=blocks_d,
    )


def fixed_point(op, b, alpha: float) -> np.ndarray:
    """Fixed point x_hat of the expected iteration (cheap accessor)."""
    return theory_constants(op, b, alpha).x_hat


def x_hat_alternative(tc: TheoryConstants, op, b) -> np.ndarray:
    """Second definition: x_hat = x_ls + B^{-1} (E B_k A_k^T W_k^T) Q_A b.

    For a row-selection partition, E B_k A_k^T W_k^T applied to a
    vector v is the average over blocks of B_i A_i^T v_i with v_i the
    block slice of v.
    """
    a, b = _dense_system(op, b)
    q_a_b = b - a @ np.linalg.solve(a.T @ a, a.T @ b)
    ell = op.block_rows
    acc = np.zeros(op.n_cols)
    for i, b_i_mat in enumerate(tc.blocks_b):
        a_i = a[i * ell : (i + 1) * ell]
        acc += b_i_mat @ (a_i.T @ q_a_b[i * ell : (i + 1) * ell])
    acc /= op.n_blocks
    return tc.x_ls + np.linalg.solve(tc.B_bar, acc)


def stationarity_residual(tc: TheoryConstants, op, b, x=None) -> float:
    """||E B_k A_k^T (A_k x - b_k)||, evaluated at x_hat by default.

    Vanishes at the fixed point; at a perturbed point x_hat + delta it
    equals ||B delta|| by linearity.
    """
    if x is None:
        drift = np.zeros(op.n_cols)
        for d_i in tc.blocks_d:
            drift += d_i
        return float(np.linalg.norm(drift / op.n_blocks))
    a, b = _dense_system(op, b)
    ell = op.block_rows
    drift = np.zeros(op.n_cols)
    for i, b_i_mat in enumerate(tc.blocks_b):
        a_i = a[i * ell : (i + 1) * ell]
        drift += b_i_mat @ (a_i.T @ (a_i @ x - b[i * ell : (i + 1) * ell]))
    return float(np.linalg.norm(drift / op.n_blocks))


@dataclass
class InequalityRow:
    name: str
    lhs: float
    rhs: float
    passed: bool
    note: str = ""


def structural_inequalities(tc: TheoryConstants, rel_slack: float = 1e-12) -> list[InequalityRow]:
    """Numerically evaluate the structural bounds on the step operator.

    * ``mean_step_norm_lt_one``: ||P||_2 < 1 strictly, and
      ``mean_step_norm_le_bound``:
      ||P||_2 <= M0/M + (M - M0)/(M (1 + alpha A_min)).  When every
      block Gram is singular (M0 = M) the closed-form bound degenerates
      to exactly 1 and only the strict statement carries content.
    * ``contraction_matrix_spd``: B symmetric positive definite.
    * ``block_product_norm_le_bound``:
      ||B_k A_k^T A_k|| <= alpha A_max / (1 + alpha A_max) per block;
      the extremal block attains the bound exactly, so the comparison
      allows relative slack ``rel_slack``.
    * ``contraction_eig_lower`` / ``contraction_eig_upper``:
      alpha A_min / (M (1 + alpha A_min)) <= lambda_min(B) and
      lambda_max(B) < (1 + alpha A_max) / 2; the lower bound degenerates
      to strict positivity of lambda_min(B) when M0 = M.
    """
    alpha = tc.alpha
    big_m = len(tc.blocks_b)
    rows = []

    if tc.a_min is not None:
        upper = tc.m_zero / big_m + (big_m - tc.m_zero) / (
            big_m * (1.0 + alpha * tc.a_min)
        )
        note = ""
    else:
        upper = 1.0
        note = "all block Grams singular; bound degenerates to 1"
    rows.append(
        InequalityRow(
            "mean_step_norm_lt_one", tc.rho, 1.0, tc.rho < 1.0, note=""
        )
    )
    rows.append(
        InequalityRow(
            "mean_step_norm_le_bound",
            tc.rho,
            upper,
            tc.rho <= upper * (1.0 + rel_slack),
            note=note,
        )
    )

    sym_err = float(np.max(np.abs(tc.B_bar - tc.B_bar.T)))
    rows.append(
        InequalityRow(
            "contraction_matrix_spd",
            sym_err if sym_err > tc.lambda_min_b else -tc.lambda_min_b,
            0.0,
            sym_err <= 1e-12 * max(1.0, tc.lambda_max_b) and tc.lambda_min_b > 0,
            note=f"lambda_min(B) = {tc.lambda_min_b:.3e}",
        )
    )

    block_bound = alpha * tc.a_max / (1.0 + alpha * tc.a_max)
    worst = 0.0
    for b_i_mat, g_i in zip(tc.blocks_b, tc.blocks_g):
        worst = max(worst, float(np.linalg.norm(b_i_mat @ g_i, 2)))
    rows.append(
        InequalityRow(
            "block_product_norm_le_bound",
            worst,
            block_bound,
            worst <= block_bound * (1.0 + rel_slack),
            note="extremal block attains the bound",
        )
    )

    if tc.a_min is not None:
        lower = alpha * tc.a_min / (big_m * (1.0 + alpha * tc.a_min))
        low_ok = lower <= tc.lambda_min_b * (1.0 + rel_slack) and lower > 0
        low_note = ""
    else:
        lower = 0.0
        low_ok = tc.lambda_min_b > 0
        low_note = "all block Grams singular; checking strict positivity"
    rows.append(
        InequalityRow(
            "contraction_eig_lower", lower, tc.lambda_min_b, low_ok, note=low_note
        )
    )
    eig_upper = (1.0 + alpha * tc.a_max) / 2.0
    rows.append(
        InequalityRow(
            "contraction_eig_upper",
            tc.lambda_max_b,
            eig_upper,
            tc.lambda_max_b < eig_upper,
        )
    )
    return rows


@dataclass
class BiasReport:
    actual: float
    bound: float
    passed: bool
    used_exact_binv: bool
    rel_to_xls: float


def bias_bound_check(tc: TheoryConstants, op, b) -> BiasReport:
    """Compare ||x_hat - x_ls|| against the bias bound."""
    actual = float(np.linalg.norm(tc.x_hat - tc.x_ls))
    xls_norm = float(np.linalg.norm(tc.x_ls))
    return BiasReport(
        actual=actual,
        bound=tc.bias_bound,
        passed=actual <= tc.bias_bound * (1.0 + 1e-12) + 1e-300,
        used_exact_binv=tc.bias_bound_exact_binv,
        rel_to_xls=actual / xls_norm if xls_norm > 0 else actual,
    )


@dataclass
class MomentTrace:
    """Exact first and second moments of the error x_k - x_hat."""

    mean_gap: np.ndarray  # ||E x_k - x_hat|| for k = 0..k_max
    second_moment: np.ndarray  # E ||x_k - x_hat||^2 for k = 0..k_max

    def __post_init__(self):
        for arr in (self.mean_gap, self.second_moment):
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ValueError("moment traces must be finite and >= 0")

    def first_moment_bound(self, tc: TheoryConstants) -> np.ndarray:
        k = np.arange(len(self.mean_gap))
        return tc.rho**k * self.mean_gap[0]

    def second_moment_bound(self, tc: TheoryConstants) -> np.ndarray:
        k = np.arange(len(self.second_moment))
        return (1.0 - 2.0 * tc.c) ** k * self.second_moment[0] + tc.horizon


def moment_recursion(
    op, b, alpha: float, x0, k_max: int, constants: TheoryConstants | None = None
) -> MomentTrace:
    """Propagate the error moments exactly under uniform iid sampling.

    With P_i = I - B_i G_i and d_i = -B_i A_i^T (A_i x_hat - b_i), the
    error e_k = x_k - x_hat follows e_k = P_i e_{k-1} + d_i with i
    uniform, so the mean m_k and second-moment matrix S_k satisfy

        m_k = P m_{k-1},
        S_k = (1/M) sum_i [P_i S_{k-1} P_i^T + P_i m_{k-1} d_i^T
                           + d_i m_{k-1}^T P_i^T + d_i d_i^T],

    and E ||x_k - x_hat||^2 = tr(S_k).  No Monte Carlo error enters.
    """
    tc = constants if constants is not None else theory_constants(op, b, alpha)
    n = op.n_cols
    big_m = op.n_blocks
    if k_max * big_m * n**3 > MOMENT_WORK_LIMIT:
        raise ValueError(
            "moment recursion workload exceeds the desk-scale guard; "
            f"k_max * M * n^3 = {k_max * big_m * n**3:.2e}"
        )
    eye = np.eye(n)
    props = [eye - b_i @ g_i for b_i, g_i in zip(tc.blocks_b, tc.blocks_g)]
    drifts = tc.blocks_d

    m_vec = np.asarray(x0, dtype=float).reshape(-1) - tc.x_hat
    s_mat = np.outer(m_vec, m_vec)
    mean_gap = [float(np.linalg.norm(m_vec))]
    second = [float(np.trace(s_mat))]
    p_bar = tc.EBk_over_alpha
    for _ in range(k_max):
        s_new = np.zeros((n, n))
        for p_i, d_i in zip(props, drifts):
            pm = p_i @ m_vec
            s_new += p_i @ s_mat @ p_i.T
            s_new += np.outer(pm, d_i)
            s_new += np.outer(d_i, pm)
            s_new += np.outer(d_i, d_i)
        s_mat = s_new / big_m
        m_vec = p_bar @ m_vec
        mean_gap.append(float(np.linalg.norm(m_vec)))
        second.append(float(np.trace(s_mat)))
    return MomentTrace(np.asarray(mean_gap), np.asarray(second))


def theory_report(op, b, alphas, k_max: int = 0, x0=None) -> list[dict]:
    """Flat pass/fail rows for every checked statement, one dict per row.

    Used by the CLI's theory verification command; columns are
    (alpha, check, lhs, rhs, passed, note).
    """
    rows: list[dict] = []
    for alpha in alphas:
        tc = theory_constants(op, b, alpha)
        for name, value in (
            ("rho", tc.rho),
            ("c", tc.c),
            ("sigma", tc.sigma),
            ("a_max", tc.a_max),
            ("a_min", tc.a_min if tc.a_min is not None else float("nan")),
            ("m_zero", tc.m_zero),
            ("lambda_min_B", tc.lambda_min_b),
            ("lambda_max_B", tc.lambda_max_b),
            ("horizon", tc.horizon),
        ):
            rows.append(
                dict(alpha=alpha, check=f"constant:{name}", lhs=value,
                     rhs=float("nan"), passed=True, note="")
            )
        stat = stationarity_residual(tc, op, b)
        b_norm = float(np.linalg.norm(np.asarray(b, float)))
        rows.append(
            dict(alpha=alpha, check="stationarity_residual", lhs=stat,
                 rhs=1e-10 * b_norm, passed=stat <= 1e-10 * b_norm, note="")
        )
        alt_gap = float(np.linalg.norm(x_hat_alternative(tc, op, b) - tc.x_hat))
        scale = max(1.0, float(np.linalg.norm(tc.x_hat)))
        rows.append(
            dict(alpha=alpha, check="x_hat_definitions_agree", lhs=alt_gap,
                 rhs=1e-10 * scale, passed=alt_gap <= 1e-10 * scale, note="")
        )
        for ineq in structural_inequalities(tc):
            rows.append(
                dict(alpha=alpha, check=f"inequality:{ineq.name}", lhs=ineq.lhs,
                     rhs=ineq.rhs, passed=ineq.passed, note=ineq.note)
            )
        bias = bias_bound_check(tc, op, b)
        rows.append(
            dict(alpha=alpha, check="bias_bound", lhs=bias.actual,
                 rhs=bias.bound, passed=bias.passed,
                 note="exact ||B^-1||" if bias.used_exact_binv else "")
        )
        if k_max > 0:
            x0_vec = np.zeros(op.n_cols) if x0 is None else x0
            trace = moment_recursion(op, b, alpha, x0_vec, k_max, constants=tc)
            fm_ok = bool(
                np.all(
                    trace.mean_gap
                    <= trace.first_moment_bound(tc) * (1 + 1e-10) + 1e-300
                )
            )
            sm_ok = bool(
                np.all(
                    trace.second_moment
                    <= trace.second_moment_bound(tc) * (1 + 1e-10) + 1e-300
                )
            )
            rows.append(
                dict(alpha=alpha, check="first_moment_contraction",
                     lhs=float(np.max(trace.mean_gap - trace.first_moment_bound(tc))),
                     rhs=0.0, passed=fm_ok, note=f"k_max={k_max}")
            )
            rows.append(
                dict(alpha=alpha, check="second_moment_horizon",
                     lhs=float(np.max(trace.second_moment - trace.second_moment_bound(tc))),
                     rhs=0.0, passed=sm_ok, note=f"k_max={k_max}")
            )
    return rows
