"""Limited-angle 2D tomography with one pass over the views.

A 64x64 head phantom is scanned over a +-60 degree wedge (a missing
wedge of 60 degrees makes the system underdetermined), one block per
projection angle, 1% noise.  Three row-action methods consume each view
once; the limited-memory method uses a two-view memory window and a
ramped damping parameter and ends with the sharpest reconstruction.

Usage: python3 demos/05_limited_angle_tomography.py [--plot]
"""

import argparse
import csv
import pathlib

import numpy as np

from slimsolve import tomo
from slimsolve.sampling import Sampler
from slimsolve.solvers import Schedule, run

OUT = pathlib.Path(__file__).parent / "out"

GRID = 64
VIEWS = 40


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--plot", action="store_true")
    args = parser.parse_args()
    OUT.mkdir(exist_ok=True)

    geom = tomo.parallel_2d_geometry(tomo.wedge_angles(VIEWS, 60.0), GRID)
    projector = tomo.build_projector(geom, GRID)
    phantom = tomo.shepp_logan(GRID)
    b = tomo.simulate_data(projector, phantom, noise_level=0.01, seed=2)
    op = projector.with_rhs(b)
    refs = {"x_true": phantom.flat}
    print(f"wedge problem: {op.n_rows} rays x {op.n_cols} pixels "
          f"({VIEWS} views, underdetermined)")

    runs = {
        # the sampled-gradient step size comes from a coarse pre-sweep;
        # anything much larger diverges on this operator
        "sg": dict(method="sg", schedule=Schedule("constant", 1e-4), r=0),
        "olbfgs": dict(method="olbfgs", schedule=Schedule("ramp", 1.0,
                                                          ramp_length=10),
                       r=0),
        "slimls": dict(method="slimls", schedule=Schedule("ramp", 1.0), r=2),
    }

    curves = {}
    for name, spec in runs.items():
        traj = run(
            spec["method"], op, Sampler("random_cyclic", VIEWS, seed=6),
            spec["schedule"], epochs=1.0, r=spec["r"], references=refs,
        )
        curves[name] = traj.rel_errors["x_true"]
        tomo.save_array(OUT / f"reconstruction_{name}.bin",
                        traj.x_final.reshape(GRID, GRID))
        print(f"{name:<8s} one-epoch rel err to truth: "
              f"{curves[name][-1]:.4f}")

    tomo.save_array(OUT / "phantom.bin", phantom.voxels)
    sino = op.apply(phantom.flat).reshape(VIEWS, GRID)
    tomo.save_csv(OUT / "sinogram.csv", sino)

    path = OUT / "limited_angle_errors.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k"] + list(curves))
        for k in range(VIEWS + 1):
            writer.writerow([k] + [f"{curves[m][k]:.17g}" for m in curves])
    print(f"wrote {path}")

    if args.plot:
        import matplotlib.pyplot as plt

        fig, axes = plt.subplots(1, 4, figsize=(13, 3.4))
        axes[0].imshow(phantom.voxels, cmap="gray", origin="lower")
        axes[0].set_title("truth")
        for ax, name in zip(axes[1:], runs):
            img = tomo.load_array(OUT / f"reconstruction_{name}.bin")
            ax.imshow(img, cmap="gray", origin="lower")
            ax.set_title(f"{name} ({curves[name][-1]:.3f})")
        for ax in axes:
            ax.axis("off")
        fig.tight_layout()
        fig.savefig(OUT / "limited_angle_reconstructions.png", dpi=150)
        print(f"wrote {OUT / 'limited_angle_reconstructions.png'}")


if __name__ == "__main__":
    main()
