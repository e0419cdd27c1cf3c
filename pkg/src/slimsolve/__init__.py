"""slimsolve: row-action solvers for large linear least-squares problems.

The package provides

* block-structured access to dense, sparse, and streamed systems
  (:mod:`slimsolve.linops`),
* block-index sampling schemes (:mod:`slimsolve.sampling`),
* the damped inner least-squares solve shared by all limited-memory
  methods (:mod:`slimsolve.innersolve`),
* the row-action iterations themselves -- sampled limited memory
  (slimLS), stochastic gradient, Kaczmarz variants, recursive LS,
  online LBFGS, and slimTik (:mod:`slimsolve.solvers`),
* exact desk-scale computation of the convergence-theory constants and
  moment recursions that validate the contraction and horizon bounds
  (:mod:`slimsolve.analysis`),
* synthetic tomography problem generation (:mod:`slimsolve.tomo`), and
* a config-driven experiment harness with CSV output and a CLI
  (:mod:`slimsolve.harness`, ``slim-solve``).
"""

from slimsolve.linops import (
    DenseBlockOperator,
    FileStreamOperator,
    SampleBlock,
    SinglePassAdapter,
    SparseBlockOperator,
    augment_with_tikhonov,
    gram_block,
    load_stream_file,
    write_stream_file,
)
from slimsolve.sampling import Sampler, verify_unbiasedness
from slimsolve.innersolve import (
    LsqrOptions,
    LsqrResult,
    Regularizer,
    direct_step,
    lsqr_damped,
    min_norm_ls,
)
from slimsolve.solvers import (
    DivergenceError,
    MemoryBuffer,
    Schedule,
    SolverState,
    Trajectory,
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
from slimsolve.analysis import (
    MomentTrace,
    TheoryConstants,
    bias_bound_check,
    structural_inequalities,
    ls_solution,
    moment_recursion,
    stationarity_residual,
    theory_constants,
)
from slimsolve.tomo import (
    Phantom,
    ProjectionGeometry,
    build_projector,
    gaussian_testproblem,
    shepp_logan,
    simulate_data,
)

__version__ = "0.1.0"
