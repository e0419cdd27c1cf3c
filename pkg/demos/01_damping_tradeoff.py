"""Damping parameter trade-off on a dense Gaussian test problem.

The memoryless limited-memory step contracts toward the fixed point of
the expected iteration, whose distance from the least-squares solution
grows with alpha.  Large alpha therefore buys fast early progress at
the price of a higher error plateau; small alpha converges slowly but
further.  This script sweeps alpha over four decades, runs repeated
randomized passes, and writes the median error curves (relative to the
alpha-specific fixed point) to CSV.

Usage: python3 demos/01_damping_tradeoff.py [--plot]
"""

import argparse
import csv
import pathlib

import numpy as np

from slimsolve import analysis, tomo
from slimsolve.sampling import Sampler
from slimsolve.solvers import Schedule, run

OUT = pathlib.Path(__file__).parent / "out"

ALPHAS = (0.001, 0.01, 0.1, 1.0, 10.0)
REPLICATES = 20
EPOCHS = 100


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--plot", action="store_true")
    args = parser.parse_args()
    OUT.mkdir(exist_ok=True)

    # the stock simulation instance: 1000x100 standard normal entries,
    # x_true = ones, 1% white noise, sampled in 100 blocks of 10 rows
    op, b, x_true = tomo.gaussian_testproblem(1000, 100, 100, seed=0)
    print(f"problem: {op.n_rows}x{op.n_cols}, M={op.n_blocks} blocks")

    curves = {}
    for alpha in ALPHAS:
        # each alpha has its own fixed point x_hat(alpha)
        tc = analysis.theory_constants(op, b, alpha)
        refs = {"x_hat": tc.x_hat}
        errs = []
        for rep in range(REPLICATES):
            traj = run(
                "slimls", op, Sampler("uniform_iid", 100, seed=100 + rep),
                Schedule("constant", alpha), epochs=EPOCHS, r=0,
                references=refs, record_every=10,
            )
            errs.append(traj.rel_errors["x_hat"])
        median = np.median(np.vstack(errs), axis=0)
        curves[alpha] = (traj.ks, median)
        print(f"alpha={alpha:<7g} median err: k=10 {median[1]:.3e}   "
              f"final {median[-1]:.3e}   horizon bound {tc.horizon:.3e}")

    path = OUT / "damping_tradeoff.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k"] + [f"median_rel_err_alpha_{a}" for a in ALPHAS])
        ks = curves[ALPHAS[0]][0]
        for i, k in enumerate(ks):
            writer.writerow([int(k)] + [f"{curves[a][1][i]:.17g}"
                                        for a in ALPHAS])
    print(f"wrote {path}")

    if args.plot:
        import matplotlib.pyplot as plt

        for alpha, (ks, median) in curves.items():
            plt.loglog(np.maximum(ks, 1), median, label=f"alpha={alpha:g}")
        plt.xlabel("iteration k")
        plt.ylabel("median relative error to the fixed point")
        plt.legend()
        plt.tight_layout()
        plt.savefig(OUT / "damping_tradeoff.png", dpi=150)
        print(f"wrote {OUT / 'damping_tradeoff.png'}")


if __name__ == "__main__":
    main()
