"""Experiment driver: problems, replicates, aggregation, CSV output.

``run_experiment`` executes one configured solver over ``replicates``
independently seeded sampling streams of the same problem instance and
writes three CSV files (prefix from ``[run] output``):

* ``<out>_metrics.csv``     one row per (replicate, recorded step)
* ``<out>_aggregate.csv``   per-step median and 5/95th percentiles
* ``<out>_replicates.csv``  per-replicate final status

Raw CSVs are byte-identical across reruns for a fixed config and seed,
except the wall-time column, which is excluded from the determinism
contract.  Floats are printed with 17 significant digits so values
round-trip exactly.
"""

from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from slimsolve import analysis, tomo
from slimsolve.config import ExperimentConfig
from slimsolve.innersolve import Regularizer
from slimsolve.linops import (
    FileStreamOperator,
    RowBlockOperator,
    SinglePassAdapter,
    load_stream_file,
    write_stream_file,
)
from slimsolve.sampling import Sampler
from slimsolve.solvers import DESK_MAX_N, Schedule, Trajectory, run

METRIC_COLUMNS = (
    "replicate",
    "k",
    "epoch_fraction",
    "rel_err_true",
    "rel_err_xls",
    "rel_err_xhat",
    "sampled_residual_norm",
    "alpha_k",
    "wall_time_seconds",
    "status",
)

_REF_COLUMN = {"x_true": "rel_err_true", "x_ls": "rel_err_xls", "x_hat": "rel_err_xhat"}


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    if np.isnan(v):
        return "nan"
    return f"{v:.17g}"


def build_problem(cfg: ExperimentConfig):
    """Instantiate the configured problem.

    Returns (operator-with-rhs, b, x_true or None).
    """
    if cfg.problem_kind == "gaussian":
        op, b, x_true = tomo.gaussian_testproblem(
            cfg.m, cfg.n, cfg.blocks, seed=cfg.problem_seed,
            noise_level=cfg.noise_level,
        )
        return op, b, x_true
    if cfg.problem_kind == "tomo2d":
        rays = cfg.rays_per_view or cfg.grid
        geom = tomo.parallel_2d_geometry(
            tomo.wedge_angles(cfg.views, cfg.half_angle), rays
        )
        phantom = tomo.shepp_logan(cfg.grid, dims=2)
        projector = tomo.build_projector(geom, cfg.grid)
        b = tomo.simulate_data(projector, phantom, cfg.noise_level, cfg.problem_seed)
        return projector.with_rhs(b), b, phantom.flat
    if cfg.problem_kind == "tomo3d":
        side = cfg.detector_side or cfg.grid
        dirs = tomo.random_directions(cfg.views, seed=cfg.problem_seed)
        geom = tomo.parallel_3d_geometry(dirs, side)
        phantom = tomo.shepp_logan(cfg.grid, dims=3)
        projector = tomo.build_projector(geom, cfg.grid)
        b = tomo.simulate_data(projector, phantom, cfg.noise_level, cfg.problem_seed)
        return projector.with_rhs(b), b, phantom.flat
    op = load_stream_file(cfg.path)
    return op, op.rhs, None


def build_schedule(cfg: ExperimentConfig) -> Schedule:
    sched = Schedule(cfg.schedule_kind, cfg.alpha, cfg.ramp_length,
                     cfg.decay_exponent)
    if sched.kind == "ramp" and sched.ramp_length is None:
        sched = sched.with_ramp_length(cfg.r + 1)
    return sched


def build_regularizer(cfg: ExperimentConfig) -> Regularizer:
    if cfg.regularizer in ("identity", "", None):
        return Regularizer.identity()
    l_matrix = np.load(cfg.regularizer)
    return Regularizer.from_factor(l_matrix)


def build_references(
    cfg: ExperimentConfig, op: RowBlockOperator, b, x_true
) -> dict[str, np.ndarray]:
    """Reference vectors for error reporting; desk-scale ones may drop.

    x_ls and x_hat need dense n-by-n work, so they are disabled (with a
    notice) when n exceeds the desk-scale guard; their CSV columns are
    then emitted empty.
    """
    refs: dict[str, np.ndarray] = {}
    wanted = set(cfg.error_references)
    if "x_true" in wanted and x_true is not None:
        refs["x_true"] = np.asarray(x_true, dtype=float)
    needs_desk = wanted & {"x_ls", "x_hat"}
    if needs_desk:
        if op.n_cols > DESK_MAX_N:
            print(
                f"note: n = {op.n_cols} exceeds the desk-scale guard "
                f"{DESK_MAX_N}; dropping references {sorted(needs_desk)}"
            )
        else:
            if "x_ls" in wanted:
                refs["x_ls"] = analysis.ls_solution(op, b)
            if "x_hat" in wanted:
                refs["x_hat"] = analysis.theory_constants(op, b, cfg.alpha).x_hat
    return refs


def _run_replicates(cfg: ExperimentConfig, op, references, reps) -> list[Trajectory]:
    out = []
    for rep in reps:
        sampler = Sampler(cfg.scheme, op.n_blocks, seed=cfg.base_seed + rep)
        out.append(
            run(
                cfg.method,
                op,
                sampler,
                build_schedule(cfg),
                epochs=cfg.epochs,
                r=cfg.r,
                reg=build_regularizer(cfg),
                lam=cfg.lam,
                olbfgs_memory=cfg.olbfgs_memory,
                references=references,
                record_every=cfg.record_every,
                store_iterates=cfg.store_iterates,
                inner=cfg.inner,
            )
        )
    return out


def _chunk_worker(args):
    cfg, references, reps = args
    op, _, _ = build_problem(cfg)
    return reps, _run_replicates(cfg, op, references, reps)


@dataclass
class ExperimentResult:
    metrics_path: str
    aggregate_path: str
    replicates_path: str
    trajectories: list[Trajectory]
    n_diverged: int


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    cfg.validate()
    op, b, x_true = build_problem(cfg)
    references = build_references(cfg, op, b, x_true)

    t0 = time.perf_counter()
    if cfg.workers == 1 or cfg.replicates == 1:
        trajectories = _run_replicates(cfg, op, references, range(cfg.replicates))
    else:
        chunks = [
            list(range(cfg.replicates))[i :: cfg.workers]
            for i in range(cfg.workers)
        ]
        chunks = [c for c in chunks if c]
        results: dict[int, Trajectory] = {}
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for reps, trajs in pool.map(
                _chunk_worker, [(cfg, references, c) for c in chunks]
            ):
                for rep, traj in zip(reps, trajs):
                    results[rep] = traj
        trajectories = [results[rep] for rep in range(cfg.replicates)]
    elapsed = time.perf_counter() - t0

    paths = write_outputs(cfg.output, cfg, trajectories, references)
    n_diverged = sum(1 for t in trajectories if t.status == "diverged")
    print(
        f"{cfg.method}: {cfg.replicates} replicate(s), "
        f"{int(round(cfg.epochs * op.n_blocks))} step(s) each, "
        f"{n_diverged} diverged, {elapsed:.2f} s"
    )
    return ExperimentResult(*paths, trajectories, n_diverged)


def write_outputs(prefix, cfg, trajectories, references):
    os.makedirs(os.path.dirname(prefix) or ".", exist_ok=True)
    metrics_path = f"{prefix}_metrics.csv"
    aggregate_path = f"{prefix}_aggregate.csv"
    replicates_path = f"{prefix}_replicates.csv"

    have = {_REF_COLUMN[name] for name in references}

    with open(metrics_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        for rep, traj in enumerate(trajectories):
            for j, k in enumerate(traj.ks):
                row = [
                    rep,
                    int(k),
                    _fmt(traj.epoch_fraction[j]),
                ]
                for name in ("x_true", "x_ls", "x_hat"):
                    col = _REF_COLUMN[name]
                    if col in have:
                        row.append(_fmt(traj.rel_errors[name][j]))
                    else:
                        row.append("")
                row.extend(
                    [
                        _fmt(traj.residual_norms[j]),
                        _fmt(traj.alphas[j]),
                        _fmt(traj.wall_times[j]),
                        traj.row_status[j],
                    ]
                )
                writer.writerow(row)

    # aggregate across replicates at each recorded k, order-independent
    per_k: dict[int, dict[str, list[float]]] = {}
    epoch_at: dict[int, float] = {}
    for traj in trajectories:
        for j, k in enumerate(traj.ks):
            bucket = per_k.setdefault(
                int(k),
                {name: [] for name in references} | {"residual": []},
            )
            epoch_at[int(k)] = float(traj.epoch_fraction[j])
            for name in references:
                bucket[name].append(traj.rel_errors[name][j])
            bucket["residual"].append(traj.residual_norms[j])

    agg_columns = ["k", "epoch_fraction", "n_replicates"]
    for name in ("x_true", "x_ls", "x_hat"):
        col = _REF_COLUMN[name]
        agg_columns += [f"median_{col}", f"p5_{col}", f"p95_{col}"]
    agg_columns += ["median_sampled_residual_norm"]

    with open(aggregate_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(agg_columns)
        for k in sorted(per_k):
            bucket = per_k[k]
            row = [k, _fmt(epoch_at[k]), len(bucket["residual"])]
            for name in ("x_true", "x_ls", "x_hat"):
                if name in references:
                    vals = np.asarray(bucket[name], dtype=float)
                    # diverged rows carry inf; interpolating percentiles
                    # across them is allowed to yield nan
                    with np.errstate(invalid="ignore"):
                        row += [
                            _fmt(np.median(vals)),
                            _fmt(np.percentile(vals, 5)),
                            _fmt(np.percentile(vals, 95)),
                        ]
                else:
                    row += ["", "", ""]
            res = np.asarray(bucket["residual"], dtype=float)
            row.append(_fmt(np.median(res)) if res.size else "")
            writer.writerow(row)

    with open(replicates_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["replicate", "status", "diverged_at", "final_k"]
        header += [f"final_{_REF_COLUMN[n]}" for n in ("x_true", "x_ls", "x_hat")]
        writer.writerow(header)
        for rep, traj in enumerate(trajectories):
            row = [
                rep,
                traj.status,
                "" if traj.diverged_at is None else traj.diverged_at,
                int(traj.ks[-1]),
            ]
            for name in ("x_true", "x_ls", "x_hat"):
                if name in references:
                    row.append(_fmt(traj.rel_errors[name][-1]))
                else:
                    row.append("")
            writer.writerow(row)

    return metrics_path, aggregate_path, replicates_path


def sweep(cfg: ExperimentConfig, axis: str | None = None) -> str:
    """One run_experiment per grid point plus a keyed summary CSV."""
    axis = axis or cfg.sweep_axis
    if axis is None:
        raise ValueError("no sweep axis given (config [sweep] axis or --axis)")
    if axis == "alpha_grid":
        values = cfg.alpha_grid
        make = lambda v: cfg.with_overrides(alpha=float(v))
    elif axis == "r_grid":
        values = cfg.r_grid
        make = lambda v: cfg.with_overrides(r=int(v))
    elif axis == "method_set":
        values = cfg.method_set
        make = lambda v: cfg.with_overrides(method=str(v))
    else:
        raise ValueError(f"unknown sweep axis {axis!r}")
    if not values:
        raise ValueError(f"sweep axis {axis!r} has no values configured")

    summary_path = f"{cfg.output}_sweep_summary.csv"
    os.makedirs(os.path.dirname(summary_path) or ".", exist_ok=True)
    rows = []
    for value in values:
        sub = make(value)
        sub = sub.with_overrides(output=f"{cfg.output}_{axis}_{value}")
        result = run_experiment(sub)
        finals = {}
        for name in ("x_true", "x_ls", "x_hat"):
            vals = [
                t.rel_errors[name][-1]
                for t in result.trajectories
                if name in t.rel_errors
            ]
            finals[name] = np.median(vals) if vals else None
        rows.append((value, result, finals))

    with open(summary_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "axis", "value", "final_k",
                "median_final_rel_err_true",
                "median_final_rel_err_xls",
                "median_final_rel_err_xhat",
                "n_diverged",
            ]
        )
        for value, result, finals in rows:
            writer.writerow(
                [
                    axis,
                    value,
                    int(result.trajectories[0].ks[-1]),
                    _fmt(finals["x_true"]),
                    _fmt(finals["x_ls"]),
                    _fmt(finals["x_hat"]),
                    result.n_diverged,
                ]
            )
    return summary_path


def stream_demo(cfg: ExperimentConfig) -> str:
    """Single-pass run over all blocks in arrival order.

    The operator is consumed through a strict single-pass wrapper (or
    read directly from a stream file), so no block is ever retained
    outside the solver's memory window; per-block partial
    reconstruction errors are logged to ``<out>_stream_metrics.csv``.
    """
    cfg = cfg.with_overrides(scheme="cyclic", epochs=min(cfg.epochs, 1.0) or 1.0,
                             replicates=1)
    if cfg.problem_kind == "file":
        stream: RowBlockOperator = FileStreamOperator(cfg.path)
        refs: dict[str, np.ndarray] = {}
    else:
        op, b, x_true = build_problem(cfg)
        refs = build_references(cfg, op, b, x_true)
        stream = SinglePassAdapter(op)
    sampler = Sampler("cyclic", stream.n_blocks, seed=cfg.base_seed)
    traj = run(
        cfg.method,
        stream,
        sampler,
        build_schedule(cfg),
        epochs=cfg.epochs,
        r=cfg.r,
        reg=build_regularizer(cfg),
        lam=cfg.lam,
        olbfgs_memory=cfg.olbfgs_memory,
        references=refs,
        record_every=1,
        inner=cfg.inner,
    )
    prefix = f"{cfg.output}_stream"
    paths = write_outputs(prefix, cfg, [traj], refs)
    return paths[0]


def gen_problem(cfg: ExperimentConfig) -> str:
    """Write the configured problem to the binary streamed-matrix format."""
    op, _, _ = build_problem(cfg)
    out = cfg.output if cfg.output.endswith(".slim") else f"{cfg.output}.slim"
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    write_stream_file(out, op)
    return out


def verify_theory(cfg: ExperimentConfig) -> tuple[str, bool]:
    """Evaluate every theory check for the configured problem.

    Writes ``<out>_theory.csv`` and returns (path, all_passed).
    """
    op, b, _ = build_problem(cfg)
    rows = analysis.theory_report(
        op, b, cfg.theory_alphas, k_max=cfg.theory_k_max
    )
    path = f"{cfg.output}_theory.csv"
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "check", "lhs", "rhs", "passed", "note"])
        for row in rows:
            writer.writerow(
                [
                    _fmt(row["alpha"]),
                    row["check"],
                    _fmt(row["lhs"]),
                    _fmt(row["rhs"]),
                    "pass" if row["passed"] else "FAIL",
                    row["note"],
                ]
            )
    checks = [r for r in rows if not r["check"].startswith("constant:")]
    all_passed = all(r["passed"] for r in checks)
    for row in checks:
        flag = "pass" if row["passed"] else "FAIL"
        print(f"[{flag}] alpha={row['alpha']:g} {row['check']}")
    return path, all_passed
