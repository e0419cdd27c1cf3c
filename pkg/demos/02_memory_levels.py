"""Effect of the memory window on early convergence.

Retaining the last r+1 sampled blocks lets each step see a better
approximation of the global curvature, so higher memory levels reach a
given error in fewer iterations.  This script fixes alpha = 1 and
compares r = 0, 2, 4, 6, 8 over the first 20 iterations, reporting the
median error relative to the least-squares solution.

Usage: python3 demos/02_memory_levels.py [--plot]
"""

import argparse
import csv
import pathlib

import numpy as np

from slimsolve import analysis, tomo
from slimsolve.sampling import Sampler
from slimsolve.solvers import Schedule, run

OUT = pathlib.Path(__file__).parent / "out"

MEMORY_LEVELS = (0, 2, 4, 6, 8)
REPLICATES = 20
ITERATIONS = 20


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--plot", action="store_true")
    args = parser.parse_args()
    OUT.mkdir(exist_ok=True)

    op, b, _ = tomo.gaussian_testproblem(1000, 100, 100, seed=0)
    refs = {"x_ls": analysis.ls_solution(op, b)}

    curves = {}
    for r in MEMORY_LEVELS:
        errs = []
        for rep in range(REPLICATES):
            traj = run(
                "slimls", op, Sampler("uniform_iid", 100, seed=300 + rep),
                Schedule("constant", 1.0),
                epochs=ITERATIONS / op.n_blocks, r=r, references=refs,
            )
            errs.append(traj.rel_errors["x_ls"])
        curves[r] = np.median(np.vstack(errs), axis=0)
        print(f"r={r}: median rel err at k={ITERATIONS}: {curves[r][-1]:.4e}")

    path = OUT / "memory_levels.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k"] + [f"median_rel_err_r{r}" for r in MEMORY_LEVELS])
        for k in range(ITERATIONS + 1):
            writer.writerow([k] + [f"{curves[r][k]:.17g}"
                                   for r in MEMORY_LEVELS])
    print(f"wrote {path}")

    if args.plot:
        import matplotlib.pyplot as plt

        for r, median in curves.items():
            plt.semilogy(range(ITERATIONS + 1), median, label=f"r={r}")
        plt.xlabel("iteration k")
        plt.ylabel("median relative error to the LS solution")
        plt.legend()
        plt.tight_layout()
        plt.savefig(OUT / "memory_levels.png", dpi=150)
        print(f"wrote {OUT / 'memory_levels.png'}")


if __name__ == "__main__":
    main()
