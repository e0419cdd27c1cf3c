"""Per-iteration damped least-squares solves.

Each limited-memory step requires the minimizer of the stacked system

    || [A_{k-r}; ...; A_{k-1}; A_k; (1/sqrt(alpha)) L] s
       - [0; ...; 0; rhs_residual; 0] ||^2

whose normal equations read (alpha^{-1} C + M^T M) s = A_k^T r with
C = L^T L and M the stack of retained blocks.  Three routes are
provided:

* :func:`lsqr_damped` -- Golub-Kahan bidiagonalization (LSQR) on the
  stacked system, with the identity-regularizer damping handled by the
  standard plane-rotation elimination so L never has to be applied
  explicitly.  Stops when the relative normal-equation residual
  ||(alpha^{-1} C + M^T M) s - A_k^T r|| / ||A_k^T r|| estimate drops
  below ``rel_tolerance``.
* :func:`direct_step` -- dense normal-equation factorization, exact to
  factorization accuracy; the oracle the iterative routes are checked
  against.
* :func:`dual_step` -- exact small-dimension solve of the equivalent
  L-by-L dual system (identity regularizer only); preferred when the
  stack has far fewer rows than columns, which is the common case for
  row-action steps on wide problems.

Defaults: rel_tolerance 1e-10, max_iterations 2n, so inner-solve error
stays far below the tolerances of the convergence-theory validators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg


@dataclass
class Regularizer:
    """Positive-definite C = L^T L used to damp the sampled Hessian."""

    kind: str  # "identity" or "matrix"
    l_matrix: np.ndarray | None = None  # factor L, if known
    c_matrix: np.ndarray | None = None  # C itself, if given unfactored

    COND_LIMIT = 1e12

    @classmethod
    def identity(cls) -> "Regularizer":
        return cls(kind="identity")

    @classmethod
    def from_factor(cls, l_matrix: np.ndarray) -> "Regularizer":
        l_matrix = np.asarray(l_matrix, dtype=float)
        cls._check_invertible(l_matrix)
        return cls(kind="matrix", l_matrix=l_matrix)

    @classmethod
    def from_matrix(cls, c_matrix: np.ndarray) -> "Regularizer":
        return cls(kind="matrix", c_matrix=np.asarray(c_matrix, dtype=float))

    @staticmethod
    def _check_invertible(l_matrix: np.ndarray):
        s = scipy.linalg.svdvals(l_matrix)
        if s[-1] == 0 or s[0] / s[-1] > Regularizer.COND_LIMIT:
            raise ValueError("regularization factor L is not invertible")

    @property
    def is_identity(self) -> bool:
        return self.kind == "identity"

    def factor(self) -> np.ndarray:
        """L with C = L^T L; Cholesky of C is computed once and cached."""
        if self.is_identity:
            raise ValueError("identity regularizer has no explicit factor")
        if self.l_matrix is None:
            chol = np.linalg.cholesky(self.c_matrix)  # C = chol chol^T
            self.l_matrix = chol.T
        return self.l_matrix

    def c_apply(self, x: np.ndarray) -> np.ndarray:
        if self.is_identity:
            return x
        if self.c_matrix is not None:
            return self.c_matrix @ x
        return self.l_matrix.T @ (self.l_matrix @ x)

    def c_full(self, n: int) -> np.ndarray:
        if self.is_identity:
            return np.eye(n)
        if self.c_matrix is not None:
            return self.c_matrix
        return self.l_matrix.T @ self.l_matrix


@dataclass
class LsqrOptions:
    rel_tolerance: float = 1e-10
    max_iterations: int | None = None  # defaults to 2n
    min_norm_mode: bool = False  # start from zero, no damping row

    def __post_init__(self):
        if self.rel_tolerance <= 0:
            raise ValueError("rel_tolerance must be > 0")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class LsqrResult:
    step: np.ndarray
    converged: bool
    iterations: int
    residual_norms: np.ndarray  # stacked-system residual estimate per iteration
    normal_residual: float  # final relative normal-equation residual estimate


def _sym_ortho(a: float, b: float) -> tuple[float, float, float]:
    """Stable Givens rotation (c, s, r) with [c s; -s c] [a; b] = [r; 0]."""
    if b == 0.0:
        return math.copysign(1.0, a) if a != 0 else 1.0, 0.0, abs(a)
    if a == 0.0:
        return 0.0, math.copysign(1.0, b), abs(b)
    if abs(b) > abs(a):
        tau = a / b
        s = math.copysign(1.0, b) / math.sqrt(1.0 + tau * tau)
        c = s * tau
        return c, s, b / s
    tau = b / a
    c = math.copysign(1.0, a) / math.sqrt(1.0 + tau * tau)
    s = c * tau
    return c, s, a / c


def _lsqr_core(a: np.ndarray, b: np.ndarray, damp: float, rel_tol: float,
               max_iter: int) -> LsqrResult:
    """Paige-Saunders LSQR for min ||a x - b||^2 + damp^2 ||x||^2, x0 = 0.

    Starting from zero keeps every iterate in range(a^T), so the limit
    is the minimum-norm LS solution when damp = 0.  Convergence is
    declared when the estimate of ||abar^T rbar|| (the normal-equation
    residual of the damped system) falls below rel_tol times its
    initial value ||a^T b||.
    """
    m, n = a.shape
    x = np.zeros(n)
    u = b.astype(float, copy=True)
    beta = float(np.linalg.norm(u))
    residual_norms = []
    if beta == 0.0:
        return LsqrResult(x, True, 0, np.array([0.0]), 0.0)
    u /= beta
    v = a.T @ u
    alfa = float(np.linalg.norm(v))
    if alfa == 0.0:
        return LsqrResult(x, True, 0, np.array([beta]), 0.0)
    v /= alfa
    w = v.copy()

    rhobar, phibar = alfa, beta
    arnorm0 = alfa * beta  # ||a^T b||
    res2 = 0.0
    residual_norms.append(beta)
    converged = False
    itn = 0
    arnorm = arnorm0
    while itn < max_iter:
        itn += 1
        u = a @ v - alfa * u
        beta = float(np.linalg.norm(u))
        if beta > 0.0:
            u /= beta
            v = a.T @ u - beta * v
            alfa = float(np.linalg.norm(v))
            if alfa > 0.0:
                v /= alfa

        # rotation eliminating the damping term
        rhobar1 = math.hypot(rhobar, damp)
        cs1 = rhobar / rhobar1
        sn1 = damp / rhobar1
        psi = sn1 * phibar
        phibar = cs1 * phibar

        # rotation eliminating the subdiagonal
        cs, sn, rho = _sym_ortho(rhobar1, beta)
        theta = sn * alfa
        rhobar = -cs * alfa
        phi = cs * phibar
        phibar = sn * phibar

        x += (phi / rho) * w
        w = v - (theta / rho) * w

        res2 += psi * psi
        rnorm = math.sqrt(phibar * phibar + res2)
        residual_norms.append(rnorm)
        arnorm = alfa * abs(sn * phi)
        if arnorm <= rel_tol * arnorm0:
            converged = True
            break

    return LsqrResult(
        x, converged, itn, np.asarray(residual_norms), arnorm / arnorm0
    )


def _stack(blocks) -> np.ndarray:
    mats = [np.atleast_2d(np.asarray(blk, dtype=float)) for blk in blocks]
    n = mats[0].shape[1]
    for mat in mats:
        if mat.shape[1] != n:
            raise ValueError("stacked blocks must share the column count")
    return np.vstack(mats) if len(mats) > 1 else mats[0]


def lsqr_damped(
    stacked_blocks,
    rhs_residual: np.ndarray,
    alpha: float,
    reg: Regularizer | None = None,
    opts: LsqrOptions | None = None,
) -> LsqrResult:
    """Solve the stacked damped LS problem for the step s_k.

    ``stacked_blocks`` lists the retained blocks oldest first; the
    right-hand side carries ``rhs_residual = A_k x_{k-1} - b_k`` in the
    rows of the newest block and zeros elsewhere (including the
    damping rows).  With ``opts.min_norm_mode`` the damping row is
    omitted entirely and the minimum-norm LS solution of the stack is
    returned; ``alpha`` is ignored in that mode.
    """
    reg = reg or Regularizer.identity()
    opts = opts or LsqrOptions()
    mat = _stack(stacked_blocks)
    rows, n = mat.shape
    rhs_residual = np.asarray(rhs_residual, dtype=float).reshape(-1)
    last_rows = np.atleast_2d(np.asarray(stacked_blocks[-1])).shape[0]
    if rhs_residual.shape[0] != last_rows:
        raise ValueError(
            f"rhs_residual has {rhs_residual.shape[0]} entries, newest "
            f"block has {last_rows} rows"
        )
    max_iter = opts.max_iterations or 2 * n

    if opts.min_norm_mode:
        rhs = np.zeros(rows)
        rhs[rows - last_rows :] = rhs_residual
        return _lsqr_core(mat, rhs, 0.0, opts.rel_tolerance, max_iter)

    if not alpha > 0:
        raise ValueError("alpha must be > 0")
    if reg.is_identity:
        # damping handled analytically, L = I never materialized
        rhs = np.zeros(rows)
        rhs[rows - last_rows :] = rhs_residual
        return _lsqr_core(
            mat, rhs, 1.0 / math.sqrt(alpha), opts.rel_tolerance, max_iter
        )
    full = np.vstack([mat, reg.factor() / math.sqrt(alpha)])
    rhs = np.zeros(rows + n)
    rhs[rows - last_rows : rows] = rhs_residual
    return _lsqr_core(full, rhs, 0.0, opts.rel_tolerance, max_iter)


def min_norm_ls(matrix, rhs: np.ndarray, opts: LsqrOptions | None = None) -> LsqrResult:
    """Minimum-norm LS solution of ``matrix x = rhs`` via undamped LSQR."""
    opts = opts or LsqrOptions(min_norm_mode=True)
    mat = np.atleast_2d(np.asarray(matrix, dtype=float))
    rhs = np.asarray(rhs, dtype=float).reshape(-1)
    max_iter = opts.max_iterations or 2 * mat.shape[1]
    return _lsqr_core(mat, rhs, 0.0, opts.rel_tolerance, max_iter)


def solve_normal(
    stacked_blocks,
    gradient: np.ndarray,
    alpha: float,
    reg: Regularizer | None = None,
) -> np.ndarray:
    """Exact solve of (alpha^{-1} C + M^T M) s = gradient (dense route)."""
    reg = reg or Regularizer.identity()
    mat = _stack(stacked_blocks)
    n = mat.shape[1]
    if not alpha > 0:
        raise ValueError("alpha must be > 0")
    system = mat.T @ mat + reg.c_full(n) / alpha
    try:
        return scipy.linalg.solve(system, gradient, assume_a="pos")
    except np.linalg.LinAlgError as exc:  # pragma: no cover - defensive
        raise np.linalg.LinAlgError(
            "damped normal system numerically singular; this should not "
            "happen for alpha > 0 and positive definite C"
        ) from exc


def _dual_system(mat: np.ndarray, alpha: float) -> np.ndarray:
    g = mat @ mat.T
    g *= alpha
    g[np.diag_indices_from(g)] += 1.0
    return g


def dual_step(
    stacked_blocks, rhs_residual: np.ndarray, alpha: float
) -> np.ndarray:
    """Exact dual solve for a residual right-hand side (identity C).

    The gradient A_k^T r lies in range(M^T), so the primal solution is
    s = alpha M^T (I + alpha M M^T)^{-1} y with y the residual padded
    by zeros for the memory blocks; only an L-by-L factorization is
    needed, L being the total stacked row count.
    """
    mat = _stack(stacked_blocks)
    rows = mat.shape[0]
    rhs_residual = np.asarray(rhs_residual, dtype=float).reshape(-1)
    y = np.zeros(rows)
    y[rows - rhs_residual.shape[0] :] = rhs_residual
    w = scipy.linalg.solve(_dual_system(mat, alpha), y, assume_a="pos")
    return alpha * (mat.T @ w)


def dual_step_vector(
    stacked_blocks, gradient: np.ndarray, alpha: float
) -> np.ndarray:
    """(alpha^{-1} I + M^T M)^{-1} gradient for a general gradient.

    Woodbury identity: the inverse equals
    alpha I - alpha^2 M^T (I + alpha M M^T)^{-1} M.  Used when the
    gradient carries terms outside range(M^T), e.g. the regularization
    gradient of the Tikhonov-augmented step.
    """
    mat = _stack(stacked_blocks)
    t = mat @ gradient
    w = scipy.linalg.solve(_dual_system(mat, alpha), t, assume_a="pos")
    return alpha * (gradient - alpha * (mat.T @ w))


def direct_step(
    stacked_blocks,
    rhs_residual: np.ndarray,
    alpha: float,
    reg: Regularizer | None = None,
) -> np.ndarray:
    """Dense normal-equation oracle for the stacked damped LS step."""
    newest = np.atleast_2d(np.asarray(stacked_blocks[-1], dtype=float))
    rhs_residual = np.asarray(rhs_residual, dtype=float).reshape(-1)
    gradient = newest.T @ rhs_residual
    return solve_normal(stacked_blocks, gradient, alpha, reg)


# The dual system I + alpha M M^T turns ill-conditioned for enormous
# alpha when the stack is row-rank deficient, and the dual route saves
# nothing once the stack is as tall as it is wide.
_DUAL_MAX_ALPHA = 1e8


def solve_step(
    stacked_blocks,
    rhs_residual: np.ndarray,
    alpha: float,
    reg: Regularizer | None = None,
    method: str = "auto",
    opts: LsqrOptions | None = None,
) -> np.ndarray:
    """Step dispatcher used by the solvers; all routes solve the same system."""
    reg = reg or Regularizer.identity()
    if method == "lsqr":
        return lsqr_damped(stacked_blocks, rhs_residual, alpha, reg, opts).step
    if method == "direct":
        return direct_step(stacked_blocks, rhs_residual, alpha, reg)
    if method == "dual":
        return dual_step(stacked_blocks, rhs_residual, alpha)
    if method != "auto":
        raise ValueError(f"unknown inner solve method {method!r}")
    rows = sum(np.atleast_2d(np.asarray(b)).shape[0] for b in stacked_blocks)
    n = np.atleast_2d(np.asarray(stacked_blocks[0])).shape[1]
    if reg.is_identity and rows <= n and alpha <= _DUAL_MAX_ALPHA:
        return solve_step(stacked_blocks, rhs_residual, alpha, reg, "dual")
    return direct_step(stacked_blocks, rhs_residual, alpha, reg)
