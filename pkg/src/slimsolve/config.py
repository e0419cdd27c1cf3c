"""Flat key = value experiment configuration.

INI-style sections keep the keys grouped per component; every key is
whitelisted and unknown sections or keys are hard errors, so typos
fail loudly instead of silently running a default.  See README for the
full grammar and a worked example.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, replace

PROBLEM_KINDS = ("gaussian", "tomo2d", "tomo3d", "file")
REFERENCES = ("x_true", "x_ls", "x_hat")
SWEEP_AXES = ("alpha_grid", "r_grid", "method_set")

_ALLOWED_KEYS = {
    "problem": {
        "kind", "m", "n", "blocks", "noise_level", "seed", "grid", "views",
        "half_angle", "rays_per_view", "detector_side", "path",
    },
    "method": {"name", "r", "lambda", "regularizer", "olbfgs_memory", "inner"},
    "schedule": {"kind", "alpha", "ramp_length", "decay_exponent"},
    "sampler": {"scheme"},
    "run": {
        "epochs", "replicates", "base_seed", "error_references", "output",
        "record_every", "workers", "store_iterates",
    },
    "sweep": {"axis", "alpha_grid", "r_grid", "method_set"},
    "theory": {"alphas", "k_max"},
}


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


@dataclass
class ExperimentConfig:
    # problem
    problem_kind: str = "gaussian"
    m: int = 1000
    n: int = 100
    blocks: int = 100
    noise_level: float = 0.01
    problem_seed: int = 0
    grid: int = 64
    views: int = 40
    half_angle: float = 60.0
    rays_per_view: int | None = None
    detector_side: int | None = None
    path: str | None = None
    # method
    method: str = "slimls"
    r: int = 0
    lam: float = 0.0
    regularizer: str = "identity"
    olbfgs_memory: int = 10
    inner: str = "auto"
    # schedule
    schedule_kind: str = "constant"
    alpha: float = 1.0
    ramp_length: int | None = None
    decay_exponent: float = 1.0
    # sampler
    scheme: str = "uniform_iid"
    # run
    epochs: float = 1.0
    replicates: int = 1
    base_seed: int = 0
    error_references: tuple[str, ...] = ("x_true",)
    output: str = "out/experiment"
    record_every: int = 1
    workers: int = 1
    store_iterates: bool = False
    # sweep
    sweep_axis: str | None = None
    alpha_grid: tuple[float, ...] = ()
    r_grid: tuple[int, ...] = ()
    method_set: tuple[str, ...] = ()
    # theory
    theory_alphas: tuple[float, ...] = (1.0,)
    theory_k_max: int = 0

    def validate(self):
        from slimsolve.sampling import SCHEMES
        from slimsolve.solvers import METHODS

        def bad(fieldname, msg):
            raise ConfigError(f"config field {fieldname!r}: {msg}")

        if self.problem_kind not in PROBLEM_KINDS:
            bad("problem.kind", f"got {self.problem_kind!r}, want {PROBLEM_KINDS}")
        if self.problem_kind == "gaussian":
            if self.m < 1 or self.n < 1 or self.blocks < 1:
                bad("problem", "m, n, blocks must be positive")
            if self.m % self.blocks != 0:
                bad("problem.blocks", f"m={self.m} not divisible by M={self.blocks}")
        if self.problem_kind == "file" and not self.path:
            bad("problem.path", "file problems need a path")
        if self.method not in METHODS:
            bad("method.name", f"got {self.method!r}, want one of {METHODS}")
        if self.r < 0:
            bad("method.r", "memory level must be >= 0")
        if self.lam < 0:
            bad("method.lambda", "lambda must be >= 0")
        if self.inner not in ("auto", "direct", "dual", "lsqr"):
            bad("method.inner", f"got {self.inner!r}")
        if self.schedule_kind not in ("constant", "ramp", "decay"):
            bad("schedule.kind", f"got {self.schedule_kind!r}")
        if not self.alpha > 0:
            bad("schedule.alpha", "alpha must be > 0")
        if self.scheme not in SCHEMES:
            bad("sampler.scheme", f"got {self.scheme!r}, want one of {SCHEMES}")
        if self.replicates < 1:
            bad("run.replicates", "need at least one replicate")
        if self.epochs < 0:
            bad("run.epochs", "epochs must be >= 0")
        if self.record_every < 1:
            bad("run.record_every", "must be >= 1")
        if self.workers < 1:
            bad("run.workers", "must be >= 1")
        for ref in self.error_references:
            if ref not in REFERENCES:
                bad("run.error_references", f"unknown reference {ref!r}")
        if self.sweep_axis is not None and self.sweep_axis not in SWEEP_AXES:
            bad("sweep.axis", f"got {self.sweep_axis!r}, want one of {SWEEP_AXES}")
        return self

    def with_overrides(self, **kwargs) -> "ExperimentConfig":
        return replace(self, **kwargs).validate()


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.replace(",", " ").split())


def _strings(text: str) -> tuple[str, ...]:
    return tuple(tok.strip() for tok in text.split(",") if tok.strip())


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc

    for section in parser.sections():
        if section not in _ALLOWED_KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _ALLOWED_KEYS[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")

    cfg = ExperimentConfig()

    def get(section, key, cast, default):
        if parser.has_option(section, key):
            raw = parser.get(section, key)
            try:
                return cast(raw)
            except ValueError as exc:
                raise ConfigError(
                    f"bad value for [{section}] {key} = {raw!r}: {exc}"
                ) from exc
        return default

    cfg.problem_kind = get("problem", "kind", str, cfg.problem_kind)
    cfg.m = get("problem", "m", int, cfg.m)
    cfg.n = get("problem", "n", int, cfg.n)
    cfg.blocks = get("problem", "blocks", int, cfg.blocks)
    cfg.noise_level = get("problem", "noise_level", float, cfg.noise_level)
    cfg.problem_seed = get("problem", "seed", int, cfg.problem_seed)
    cfg.grid = get("problem", "grid", int, cfg.grid)
    cfg.views = get("problem", "views", int, cfg.views)
    cfg.half_angle = get("problem", "half_angle", float, cfg.half_angle)
    cfg.rays_per_view = get("problem", "rays_per_view", int, cfg.rays_per_view)
    cfg.detector_side = get("problem", "detector_side", int, cfg.detector_side)
    cfg.path = get("problem", "path", str, cfg.path)

    cfg.method = get("method", "name", str, cfg.method)
    cfg.r = get("method", "r", int, cfg.r)
    cfg.lam = get("method", "lambda", float, cfg.lam)
    cfg.regularizer = get("method", "regularizer", str, cfg.regularizer)
    cfg.olbfgs_memory = get("method", "olbfgs_memory", int, cfg.olbfgs_memory)
    cfg.inner = get("method", "inner", str, cfg.inner)

    cfg.schedule_kind = get("schedule", "kind", str, cfg.schedule_kind)
    cfg.alpha = get("schedule", "alpha", float, cfg.alpha)
    cfg.ramp_length = get("schedule", "ramp_length", int, cfg.ramp_length)
    cfg.decay_exponent = get(
        "schedule", "decay_exponent", float, cfg.decay_exponent
    )

    cfg.scheme = get("sampler", "scheme", str, cfg.scheme)

    cfg.epochs = get("run", "epochs", float, cfg.epochs)
    cfg.replicates = get("run", "replicates", int, cfg.replicates)
    cfg.base_seed = get("run", "base_seed", int, cfg.base_seed)
    cfg.error_references = get(
        "run", "error_references", _strings, cfg.error_references
    )
    cfg.output = get("run", "output", str, cfg.output)
    cfg.record_every = get("run", "record_every", int, cfg.record_every)
    cfg.workers = get("run", "workers", int, cfg.workers)
    cfg.store_iterates = get(
        "run", "store_iterates", lambda s: s.lower() in ("1", "true", "yes"),
        cfg.store_iterates,
    )

    cfg.sweep_axis = get("sweep", "axis", str, cfg.sweep_axis)
    cfg.alpha_grid = get("sweep", "alpha_grid", _floats, cfg.alpha_grid)
    cfg.r_grid = get("sweep", "r_grid", _ints, cfg.r_grid)
    cfg.method_set = get("sweep", "method_set", _strings, cfg.method_set)

    cfg.theory_alphas = get("theory", "alphas", _floats, cfg.theory_alphas)
    cfg.theory_k_max = get("theory", "k_max", int, cfg.theory_k_max)

    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
