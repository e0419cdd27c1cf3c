"""Sensitivity of three row-action methods to the step-size choice.

After one pass over the data, the plain sampled-gradient method only
works inside a narrow window of step sizes, online LBFGS widens the
window around alpha = 1, and the damped limited-memory step stays
usable across the whole sweep: its effective step length saturates
because the damping enters through (alpha^{-1} I + sampled Gram)^{-1}.

The script records the median one-epoch error (relative to the
alpha-specific fixed point of the damped iteration) plus the 5th/95th
percentiles over repeated runs, with divergence shown as inf.

Usage: python3 demos/03_step_size_robustness.py [--plot]
"""

import argparse
import csv
import pathlib

import numpy as np

from slimsolve import analysis, tomo
from slimsolve.sampling import Sampler
from slimsolve.solvers import Schedule, run

OUT = pathlib.Path(__file__).parent / "out"

ALPHAS = tuple(10.0**e for e in range(-5, 4))
METHODS = ("slimls", "sg", "olbfgs")
REPLICATES = 20


def one_epoch_errors(method, op, refs, alpha):
    finals = []
    for rep in range(REPLICATES):
        traj = run(
            method, op, Sampler("uniform_iid", op.n_blocks, seed=500 + rep),
            Schedule("constant", alpha), epochs=1.0, r=0,
            references=refs, record_every=op.n_blocks,
        )
        if traj.status == "diverged":
            finals.append(np.inf)
        else:
            finals.append(traj.rel_errors["x_hat"][-1])
    finals = np.asarray(finals)
    with np.errstate(invalid="ignore"):  # percentiles across inf entries
        return (np.median(finals), np.percentile(finals, 5),
                np.percentile(finals, 95))


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--plot", action="store_true")
    args = parser.parse_args()
    OUT.mkdir(exist_ok=True)

    op, b, _ = tomo.gaussian_testproblem(1000, 100, 100, seed=0)

    rows = []
    for alpha in ALPHAS:
        refs = {"x_hat": analysis.theory_constants(op, b, alpha).x_hat}
        entry = {"alpha": alpha}
        for method in METHODS:
            med, p5, p95 = one_epoch_errors(method, op, refs, alpha)
            entry[method] = (med, p5, p95)
        rows.append(entry)
        summary = "  ".join(
            f"{m}: {entry[m][0]:.2e}" for m in METHODS
        )
        print(f"alpha={alpha:<8g} {summary}")

    path = OUT / "step_size_robustness.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["alpha"]
        for m in METHODS:
            header += [f"{m}_median", f"{m}_p5", f"{m}_p95"]
        writer.writerow(header)
        for entry in rows:
            out = [f"{entry['alpha']:.17g}"]
            for m in METHODS:
                out += [f"{v:.17g}" for v in entry[m]]
            writer.writerow(out)
    print(f"wrote {path}")

    if args.plot:
        import matplotlib.pyplot as plt

        for m in METHODS:
            med = [entry[m][0] for entry in rows]
            plt.loglog(ALPHAS, med, marker="o", label=m)
        plt.xlabel("step size / damping parameter alpha")
        plt.ylabel("median relative error after one epoch")
        plt.ylim(top=1e3)
        plt.legend()
        plt.tight_layout()
        plt.savefig(OUT / "step_size_robustness.png", dpi=150)
        print(f"wrote {OUT / 'step_size_robustness.png'}")


if __name__ == "__main__":
    main()
