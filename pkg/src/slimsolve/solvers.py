"""Row-action iterations over sampled blocks.

All methods share the update skeleton

    x_k = x_{k-1} - B_k A_k^T (A_k x_{k-1} - b_k)

and differ only in the scaling matrix B_k:

* ``sg``                     B_k = alpha_k I
* ``kaczmarz``               B_k = alpha_k / ||a||^2  (single row)
* ``block_kaczmarz``         B_k = alpha_k (A_k^T A_k)^+
* ``damped_block_kaczmarz``  B_k = (alpha_k^{-1} I + A_k^T A_k)^{-1}
* ``slimls``                 B_k = (alpha_k^{-1} C_k + M_k^T M_k)^{-1},
                             M_k the stack of the last r+1 blocks
* ``recursive_ls``           B_k = (sum_{i<=k} A_i^T A_i)^+
* ``olbfgs``                 B_k = alpha_k H_k, H_k from the two-loop
                             recursion over stored curvature pairs
* ``slimtik``                slimls on the Tikhonov-augmented system,
                             evaluated in closed form on the raw blocks

The sampled limited-memory method keeps a sliding window of the last
r+1 blocks; the window is filled gradually over the first r iterations
and persists across epoch boundaries.  The current block always enters
the window before the inner solve.

Steps mutate a :class:`SolverState` in place and return it.  An
iterate with non-finite entries, or with norm exceeding
``1e12 * (1 + ||x_0||)``, raises :class:`DivergenceError`; the driver
:func:`run` converts that into a ``diverged`` trajectory status, which
is deliberate because step-size robustness studies probe divergent
regimes.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from slimsolve import innersolve
from slimsolve.innersolve import LsqrOptions, Regularizer
from slimsolve.linops import RowBlockOperator, SampleBlock, gram_block

DESK_MAX_N = 2000
DIVERGENCE_FACTOR = 1e12
CURVATURE_TOL = 1e-12
PINV_CUTOFF = 1e-12

METHODS = (
    "slimls",
    "sg",
    "kaczmarz",
    "block_kaczmarz",
    "damped_block_kaczmarz",
    "recursive_ls",
    "olbfgs",
    "slimtik",
)


class DivergenceError(RuntimeError):
    """Iterate became non-finite or exceeded the divergence threshold."""


class MemoryBuffer:
    """Sliding window over the last ``capacity`` sampled blocks.

    Holds at most r+1 blocks, oldest first; pushing beyond capacity
    evicts the oldest.  Never reset between epochs.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._blocks: deque[SampleBlock] = deque(maxlen=capacity)

    def push(self, blk: SampleBlock):
        self._blocks.append(blk)

    def blocks(self) -> list[SampleBlock]:
        return list(self._blocks)

    def newest(self) -> SampleBlock:
        return self._blocks[-1]

    def __len__(self) -> int:
        return len(self._blocks)


@dataclass
class Schedule:
    """Damping/step-size sequence alpha_k, k >= 1.

    * ``constant``: alpha_k = alpha.
    * ``ramp``: alpha_k = alpha * k / ramp_length for the first
      ramp_length iterations (normally r+1), then alpha.
    * ``decay``: alpha_k = alpha / k**decay_exponent.
    """

    kind: str = "constant"
    alpha: float = 1.0
    ramp_length: int | None = None
    decay_exponent: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "ramp", "decay"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if self.kind == "ramp" and self.ramp_length is not None:
            if self.ramp_length < 1:
                raise ValueError("ramp_length must be >= 1")

    def alpha_at(self, k: int) -> float:
        if k < 1:
            raise ValueError("step index k is 1-based")
        if self.kind == "constant":
            return self.alpha
        if self.kind == "ramp":
            length = self.ramp_length or 1
            if k >= length:
                return self.alpha
            return self.alpha * (k / length)
        return self.alpha / k**self.decay_exponent

    def with_ramp_length(self, length: int) -> "Schedule":
        return Schedule(self.kind, self.alpha, length, self.decay_exponent)


@dataclass
class SolverState:
    """Current iterate plus everything a step needs to continue."""

    x: np.ndarray
    schedule: Schedule
    buffer: MemoryBuffer
    k: int = 0
    x0_norm: float = 0.0
    aux: dict = field(default_factory=dict)

    def __post_init__(self):
        limit = DIVERGENCE_FACTOR * (1.0 + self.x0_norm)
        self.aux.setdefault("_div_limit_sq", limit * limit)

    @classmethod
    def start(
        cls, x0: np.ndarray, schedule: Schedule, r: int = 0
    ) -> "SolverState":
        x0 = np.array(x0, dtype=float).reshape(-1)
        return cls(
            x=x0.copy(),
            schedule=schedule,
            buffer=MemoryBuffer(r + 1),
            x0_norm=float(np.linalg.norm(x0)),
        )


def _next_alpha(state: SolverState) -> tuple[int, float]:
    k = state.k + 1
    alpha = state.schedule.alpha_at(k)
    if not alpha > 0:
        raise ValueError(f"schedule produced alpha_{k} = {alpha} <= 0")
    return k, alpha


def _finish(state: SolverState, k: int, new_x: np.ndarray) -> SolverState:
    state.x = new_x
    state.k = k
    # squared norm is NaN/inf exactly when the iterate is, so one dot
    # product covers both the finiteness and the magnitude check
    norm_sq = float(new_x @ new_x)
    if not norm_sq <= state.aux["_div_limit_sq"]:
        raise DivergenceError(f"iterate diverged at step {k}")
    return state


def _sampled_residual(state: SolverState, blk: SampleBlock) -> np.ndarray:
    residual = blk.a_block @ state.x - blk.b_block
    state.aux["last_residual_norm"] = float(np.sqrt(residual @ residual))
    return residual


# caches stay bounded even under per-step alpha schedules
_SOLVE_CACHE_MAX_ENTRIES = 512


def _dual_single_block(
    state: SolverState, blk: SampleBlock, residual: np.ndarray, alpha: float
) -> np.ndarray:
    """s = alpha A^T (I + alpha A A^T)^{-1} r with the small factor cached.

    Exact single-block specialization of the dual solve; the
    ell-by-ell inverse depends only on (block, alpha), so it is cached
    per (index, alpha) -- fetches of the same index are bit-identical
    by contract.  Under a decaying schedule every step has a fresh
    alpha, so caching stops once the cache outgrows its bound.
    """
    cache = state.aux.setdefault("dual_inverse_cache", {})
    key = (blk.block_index, alpha)
    inv = cache.get(key)
    if inv is None:
        system = alpha * (blk.a_block @ blk.a_block.T)
        system[np.diag_indices_from(system)] += 1.0
        inv = np.linalg.inv(system)
        if len(cache) < _SOLVE_CACHE_MAX_ENTRIES:
            cache[key] = inv
    return alpha * (blk.a_block.T @ (inv @ residual))


def slimls_step(
    state: SolverState,
    blk: SampleBlock,
    reg: Regularizer | None = None,
    inner: str = "auto",
) -> SolverState:
    """One sampled limited-memory step.

    The block joins the memory window first, then the damped stacked
    least-squares subproblem is solved for the step s_k and
    x_k = x_{k-1} - s_k.
    """
    reg = reg or Regularizer.identity()
    k, alpha = _next_alpha(state)
    state.buffer.push(blk)
    residual = _sampled_residual(state, blk)
    window = state.buffer.blocks()
    if (
        inner == "auto"
        and reg.is_identity
        and len(window) == 1
        and blk.n_rows <= blk.n_cols
        and alpha <= innersolve._DUAL_MAX_ALPHA
    ):
        s = _dual_single_block(state, blk, residual, alpha)
    else:
        s = innersolve.solve_step(
            [w.a_block for w in window], residual, alpha, reg, method=inner
        )
    return _finish(state, k, state.x - s)


def sg_step(state: SolverState, blk: SampleBlock) -> SolverState:
    """Plain sampled-gradient step x - alpha A_k^T (A_k x - b_k)."""
    k, alpha = _next_alpha(state)
    residual = _sampled_residual(state, blk)
    gradient = blk.a_block.T @ residual
    return _finish(state, k, state.x - alpha * gradient)


def kaczmarz_step(
    state: SolverState, row: np.ndarray, entry: float
) -> SolverState:
    """Relaxed projection onto the hyperplane of a single row."""
    k, alpha = _next_alpha(state)
    row = np.asarray(row, dtype=float).reshape(-1)
    norm_sq = float(row @ row)
    if norm_sq == 0.0:
        raise ValueError(
            "zero row in Kaczmarz step; rows with vanishing norm need the "
            "damped variants"
        )
    residual = float(row @ state.x - entry)
    state.aux["last_residual_norm"] = abs(residual)
    return _finish(state, k, state.x - alpha * (residual / norm_sq) * row)


def block_kaczmarz_step(
    state: SolverState, blk: SampleBlock, opts: LsqrOptions | None = None
) -> SolverState:
    """Projection step x - alpha A_k^+ (A_k x - b_k).

    The pseudoinverse action is the minimum-norm LS solution of
    A_k s = residual; single-row blocks take the closed form, which
    makes them coincide with :func:`kaczmarz_step` bit for bit.
    """
    if blk.n_rows == 1:
        return kaczmarz_step(state, blk.a_block[0], float(blk.b_block[0]))
    k, alpha = _next_alpha(state)
    residual = _sampled_residual(state, blk)
    result = innersolve.min_norm_ls(
        blk.a_block, residual, opts or LsqrOptions(min_norm_mode=True)
    )
    if not result.converged:
        raise RuntimeError(
            f"inner min-norm solve did not converge at step {k} "
            f"(normal residual {result.normal_residual:.2e})"
        )
    return _finish(state, k, state.x - alpha * result.step)


def damped_block_kaczmarz_step(
    state: SolverState, blk: SampleBlock
) -> SolverState:
    """Memoryless damped step; exactly slimls with r = 0 and C = I."""
    if state.buffer.capacity != 1:
        raise ValueError(
            "damped block Kaczmarz keeps no memory; create the state with r=0"
        )
    return slimls_step(state, blk, Regularizer.identity())


def _pinv_solve_psd(gram: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Pseudoinverse action of a PSD matrix via eigendecomposition.

    Eigenvalues below ``PINV_CUTOFF`` times the largest are treated as
    zero, so the result stays in the numerical range of the matrix.
    """
    w, v = np.linalg.eigh(gram)
    top = w[-1]
    if top <= 0:
        return np.zeros_like(rhs)
    inv = np.where(w > PINV_CUTOFF * top, 1.0 / np.where(w > 0, w, 1.0), 0.0)
    return v @ (inv * (v.T @ rhs))


def recursive_ls_step(state: SolverState, blk: SampleBlock) -> SolverState:
    """Randomized recursive LS update with dense Gram accumulation.

    Starting from x_0 = 0 (enforced at state creation) each iterate is
    the minimum-norm LS solution of the system stacked from all blocks
    seen so far; one full epoch over a partition therefore lands on the
    LS solution exactly.  Desk-scale only: the accumulated Gram is a
    dense n-by-n matrix.
    """
    n = blk.n_cols
    if "rls_gram" not in state.aux:
        if n > DESK_MAX_N:
            raise ValueError(
                f"recursive LS accumulates an n-by-n Gram; n = {n} exceeds "
                f"the desk-scale guard {DESK_MAX_N}"
            )
        if state.x0_norm != 0.0:
            raise ValueError("recursive LS requires x0 = 0")
        state.aux["rls_gram"] = np.zeros((n, n))
    gram = state.aux["rls_gram"]
    k, _ = _next_alpha(state)
    gram += gram_block(blk)
    residual = _sampled_residual(state, blk)
    s = _pinv_solve_psd(gram, blk.a_block.T @ residual)
    return _finish(state, k, state.x - s)


def _two_loop(pairs, gradient: np.ndarray) -> np.ndarray:
    """Standard LBFGS two-loop recursion applied to ``gradient``.

    The initial inverse-Hessian guess is gamma I with gamma from the
    newest pair (identity when the memory is empty, which makes the
    direction coincide with the raw gradient).
    """
    q = gradient.copy()
    coeffs = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        coeffs.append(a)
        q -= a * y
    if pairs:
        s_new, y_new, _ = pairs[-1]
        gamma = (s_new @ y_new) / (y_new @ y_new)
    else:
        gamma = 1.0
    r = gamma * q
    for (s, y, rho), a in zip(pairs, reversed(coeffs)):
        b = rho * (y @ r)
        r += (a - b) * s
    return r


def olbfgs_step(
    state: SolverState, blk: SampleBlock, memory: int = 10
) -> SolverState:
    """Online LBFGS step on the sampled gradient.

    Curvature pairs use the sampled Gram: s_j = x_j - x_{j-1} and
    y_j = A_j^T A_j s_j, which is the exact curvature of the sampled
    quadratic along the step.  A pair is stored only when
    s^T y > 1e-12 ||s|| ||y||.
    """
    k, alpha = _next_alpha(state)
    pairs = state.aux.setdefault("lbfgs_pairs", deque(maxlen=memory))
    residual = _sampled_residual(state, blk)
    gradient = blk.a_block.T @ residual
    direction = _two_loop(pairs, gradient)
    s = -alpha * direction
    y = blk.a_block.T @ (blk.a_block @ s)
    sy = float(s @ y)
    if sy > CURVATURE_TOL * np.linalg.norm(s) * np.linalg.norm(y):
        pairs.append((s, y, 1.0 / sy))
    return _finish(state, k, state.x + s)


def slimtik_step(
    state: SolverState,
    blk: SampleBlock,
    reg: Regularizer | None = None,
    lam: float = 0.0,
    n_blocks: int | None = None,
) -> SolverState:
    """Sampled limited-memory step for the Tikhonov-augmented problem.

    Equivalent to running slimls with C = L^T L on the system augmented
    with rows lam L and zero data, under the sampling that hands every
    draw a 1/sqrt(M) share of the penalty rows -- but evaluated on the
    raw blocks: the penalty contributes (n_buf lam^2 / M) L^T L to the
    damped Hessian (n_buf = blocks currently in memory) and
    (lam^2 / M) L^T L x to the gradient.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    reg = reg or Regularizer.identity()
    if lam == 0.0:
        return slimls_step(state, blk, reg)
    if n_blocks is None:
        raise ValueError("slimtik needs the total block count M")
    k, alpha = _next_alpha(state)
    state.buffer.push(blk)
    residual = _sampled_residual(state, blk)
    window = state.buffer.blocks()
    weight = lam * lam / n_blocks
    alpha_eff = 1.0 / (1.0 / alpha + len(window) * weight)
    gradient = blk.a_block.T @ residual + weight * reg.c_apply(state.x)
    mats = [w.a_block for w in window]
    rows = sum(m.shape[0] for m in mats)
    if reg.is_identity and rows <= blk.n_cols and alpha_eff <= innersolve._DUAL_MAX_ALPHA:
        s = innersolve.dual_step_vector(mats, gradient, alpha_eff)
    else:
        s = innersolve.solve_normal(mats, gradient, alpha_eff, reg)
    return _finish(state, k, state.x - s)


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    """Recorded metrics of one solver run."""

    ks: np.ndarray
    epoch_fraction: np.ndarray
    alphas: np.ndarray
    residual_norms: np.ndarray
    rel_errors: dict[str, np.ndarray]
    wall_times: np.ndarray
    row_status: list[str]
    x_final: np.ndarray
    status: str = "ok"
    diverged_at: int | None = None
    iterates: list[np.ndarray] | None = None

    def rel_error(self, name: str) -> np.ndarray:
        return self.rel_errors[name]


def _make_stepper(method, reg, lam, n_blocks, olbfgs_memory, inner):
    if method == "slimls":
        return lambda st, blk: slimls_step(st, blk, reg, inner)
    if method == "sg":
        return sg_step
    if method == "kaczmarz":
        return lambda st, blk: kaczmarz_step(
            st, blk.a_block[0], float(blk.b_block[0])
        )
    if method == "block_kaczmarz":
        return block_kaczmarz_step
    if method == "damped_block_kaczmarz":
        return damped_block_kaczmarz_step
    if method == "recursive_ls":
        return recursive_ls_step
    if method == "olbfgs":
        return lambda st, blk: olbfgs_step(st, blk, olbfgs_memory)
    if method == "slimtik":
        return lambda st, blk: slimtik_step(st, blk, reg, lam, n_blocks)
    raise ValueError(f"unknown method {method!r}, want one of {METHODS}")


def run(
    method: str,
    op: RowBlockOperator,
    sampler,
    schedule: Schedule,
    *,
    epochs: float,
    r: int = 0,
    reg: Regularizer | None = None,
    lam: float = 0.0,
    olbfgs_memory: int = 10,
    x0: np.ndarray | None = None,
    references: dict[str, np.ndarray] | None = None,
    record_every: int = 1,
    store_iterates: bool = False,
    inner: str = "auto",
) -> Trajectory:
    """Execute ``epochs * M`` sampled steps and record metrics.

    Deterministic given the sampler seed.  Relative errors are recorded
    against every vector in ``references`` (e.g. x_true, x_ls, x_hat).
    Rows are recorded at k = 0, every ``record_every``-th step, the
    final step, and a divergence step if one occurs.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}, want one of {METHODS}")
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    if r < 0:
        raise ValueError("memory level r must be >= 0")
    big_m = op.n_blocks
    steps = int(round(epochs * big_m))
    if op.access_mode == "single_pass":
        if sampler.scheme != "cyclic":
            raise ValueError("single-pass operators require cyclic sampling")
        if steps > big_m:
            raise ValueError(
                "single-pass operators cannot be revisited; at most one epoch"
            )
    if method == "kaczmarz" and op.block_rows != 1:
        raise ValueError("kaczmarz operates on single rows; need ell = 1")
    if schedule.kind == "ramp" and schedule.ramp_length is None:
        schedule = schedule.with_ramp_length(r + 1)

    x0 = np.zeros(op.n_cols) if x0 is None else np.asarray(x0, dtype=float)
    if method == "recursive_ls" and np.any(x0 != 0.0):
        raise ValueError("recursive LS requires x0 = 0")
    state = SolverState.start(x0, schedule, r=r)
    stepper = _make_stepper(method, reg, lam, big_m, olbfgs_memory, inner)

    references = references or {}
    ref_items = [
        (name, np.asarray(vec, dtype=float), float(np.linalg.norm(vec)))
        for name, vec in references.items()
    ]

    ks, efrac, alphas, resid, wall = [], [], [], [], []
    statuses: list[str] = []
    rel: dict[str, list] = {name: [] for name, _, _ in ref_items}
    iterates: list[np.ndarray] | None = [] if store_iterates else None

    def record(k: int, alpha: float, status: str, dt: float):
        ks.append(k)
        efrac.append(k / big_m)
        alphas.append(alpha)
        resid.append(state.aux.get("last_residual_norm", np.nan) if k else np.nan)
        wall.append(dt)
        statuses.append(status)
        for name, vec, nrm in ref_items:
            diff = float(np.linalg.norm(state.x - vec))
            rel[name].append(diff / nrm if nrm > 0 else diff)
        if iterates is not None:
            iterates.append(state.x.copy())

    status = "ok"
    diverged_at = None
    record(0, np.nan, "ok", 0.0)
    t_prev = time.perf_counter()
    for k in range(1, steps + 1):
        idx = sampler.next_index()
        blk = op.fetch_block(idx)
        try:
            stepper(state, blk)
        except DivergenceError:
            status = "diverged"
            diverged_at = k
            now = time.perf_counter()
            record(k, state.schedule.alpha_at(k), "diverged", now - t_prev)
            break
        if k % record_every == 0 or k == steps:
            now = time.perf_counter()
            record(k, state.schedule.alpha_at(k), "ok", now - t_prev)
            t_prev = now

    return Trajectory(
        ks=np.asarray(ks, dtype=np.int64),
        epoch_fraction=np.asarray(efrac),
        alphas=np.asarray(alphas),
        residual_norms=np.asarray(resid),
        rel_errors={name: np.asarray(vals) for name, vals in rel.items()},
        wall_times=np.asarray(wall),
        row_status=statuses,
        x_final=state.x.copy(),
        status=status,
        diverged_at=diverged_at,
        iterates=iterates,
    )
