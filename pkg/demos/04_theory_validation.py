"""Numerical validation of the convergence theory at desk scale.

Because the sampling distribution is finite (uniform over M blocks),
every expectation in the theory can be computed exactly.  This script

* evaluates the structural inequalities for the expected step operator,
* propagates the exact first and second moments of the error and
  compares them against the contraction and horizon bounds,
* traces how the gap between the damped fixed point and the LS
  solution shrinks as alpha decreases, against the bias bound.

Usage: python3 demos/04_theory_validation.py
"""

import csv
import pathlib

import numpy as np

from slimsolve import analysis, tomo

OUT = pathlib.Path(__file__).parent / "out"


def main():
    OUT.mkdir(exist_ok=True)
    op, b, _ = tomo.gaussian_testproblem(200, 50, 20, seed=1)
    print(f"problem: {op.n_rows}x{op.n_cols}, M={op.n_blocks}\n")

    print("-- structural inequalities of the expected step operator --")
    for alpha in (0.1, 1.0, 10.0):
        tc = analysis.theory_constants(op, b, alpha)
        rows = analysis.structural_inequalities(tc)
        status = "all hold" if all(r.passed for r in rows) else "FAILED"
        print(f"alpha={alpha:<5g} rho={tc.rho:.6f}  c={tc.c:.3e}  "
              f"sigma={tc.sigma:.3e}  {status}")

    print("\n-- exact moment recursion vs bounds (alpha = 1) --")
    tc = analysis.theory_constants(op, b, 1.0)
    trace = analysis.moment_recursion(op, b, 1.0, np.zeros(50), 200,
                                      constants=tc)
    fm_bound = trace.first_moment_bound(tc)
    sm_bound = trace.second_moment_bound(tc)
    with open(OUT / "moment_traces.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "mean_gap", "mean_gap_bound",
                         "second_moment", "second_moment_bound"])
        for k in range(len(trace.mean_gap)):
            writer.writerow([k, f"{trace.mean_gap[k]:.17g}",
                             f"{fm_bound[k]:.17g}",
                             f"{trace.second_moment[k]:.17g}",
                             f"{sm_bound[k]:.17g}"])
    for k in (0, 10, 50, 200):
        print(f"k={k:<4d} ||E x_k - x_hat|| = {trace.mean_gap[k]:.3e} "
              f"(bound {fm_bound[k]:.3e})   E||x_k - x_hat||^2 = "
              f"{trace.second_moment[k]:.3e} (bound {sm_bound[k]:.3e})")
    print(f"horizon alpha^2 sigma^2 / c = {tc.horizon:.3e}")
    print(f"wrote {OUT / 'moment_traces.csv'}")

    print("\n-- fixed-point bias vs alpha --")
    with open(OUT / "bias_vs_alpha.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "rel_bias", "bound", "passed"])
        for alpha in (10.0, 1.0, 0.1, 0.01, 0.001):
            tc = analysis.theory_constants(op, b, alpha)
            rep = analysis.bias_bound_check(tc, op, b)
            writer.writerow([f"{alpha:g}", f"{rep.rel_to_xls:.17g}",
                             f"{rep.bound:.17g}", rep.passed])
            print(f"alpha={alpha:<6g} ||x_hat - x_ls||/||x_ls|| = "
                  f"{rep.rel_to_xls:.3e}  (bound {rep.bound:.3e})")
    print(f"wrote {OUT / 'bias_vs_alpha.csv'}")


if __name__ == "__main__":
    main()
