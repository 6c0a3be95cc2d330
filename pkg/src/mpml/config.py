"""Experiment configuration files.

A config is a flat INI file with a single ``[experiment]`` section::

    [experiment]
    solver = minres
    tol_sq = 8e-6, 4e-6, 2e-6, 1e-6
    k_p = 0.05
    replicates = 200

Every key is optional; see ``ExperimentConfig`` for defaults. List values are
comma separated. ``h0`` accepts fractions such as ``1/8``.
"""

from __future__ import annotations

import configparser
import dataclasses
import json
import os
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .iterative_refinement import POLICIES
from .multilevel_engine import DecayRates
from .pde_model import ModelProblem, RandomFieldParams, SolverSpec

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config"]

SECTION = "experiment"
SOLVERS = ("minres", "cholesky_ir")
COST_METRICS = ("auto", "flops", "mem_bits", "apriori")
METHODS = ("mlmc", "mpml")


class ConfigError(ValueError):
    pass


def _float(text: str) -> float:
    text = text.strip()
    try:
        return float(Fraction(text)) if "/" in text else float(text)
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"not a number: {text!r}") from None


def _floats(text: str) -> tuple:
    return tuple(_float(t) for t in text.split(",") if t.strip())


def _ints(text: str) -> tuple:
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise ConfigError(f"not an integer list: {text!r}") from None


def _words(text: str) -> tuple:
    return tuple(t.strip().lower() for t in text.split(",") if t.strip())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _optional_float(text: str) -> Optional[float]:
    return None if text.strip().lower() in ("", "none") else _float(text)


@dataclass
class ExperimentConfig:
    # problem
    s: int = 4
    q: float = 2.0
    sigma: float = 2.0
    h0: float = 1 / 8
    m: int = 2
    # solvers: MLMC uses ``solver`` at fixed ``tol`` (direct binary64 Cholesky
    # for cholesky_ir); MPML uses the schedule with MINRES or IR + ``policy``
    solver: str = "minres"
    tol: float = 1e-6
    policy: str = "default"
    i_max: int = 50
    max_iter: Optional[int] = None
    # estimator
    tol_sq: tuple = (8e-6, 4e-6, 2e-6, 1e-6)
    k_p: tuple = (0.05,)
    n_init: int = 100
    l_max: int = 6
    replicates: int = 200
    bias_r: float = 1.0
    cost_metric: str = "auto"
    methods: tuple = METHODS
    forced_samples: bool = False
    reference: Optional[float] = None
    reference_tol_sq: float = 2e-8
    # decay study
    levels: tuple = (0, 1, 2)
    eps: tuple = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 1e-4, 1e-6, 1e-10)
    var_samples: int = 100
    bias_samples: int = 1000
    # run control
    seed: int = 0
    workers: int = 1
    out: str = "results"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        if self.policy not in POLICIES:
            raise ConfigError(f"policy must be one of {tuple(POLICIES)}, got {self.policy!r}")
        if self.cost_metric not in COST_METRICS:
            raise ConfigError(f"cost_metric must be one of {COST_METRICS}, got {self.cost_metric!r}")
        bad = [x for x in self.methods if x not in METHODS]
        if bad or not self.methods:
            raise ConfigError(f"methods must be a non-empty subset of {METHODS}, got {self.methods!r}")
        if not self.tol_sq or any(t <= 0 for t in self.tol_sq):
            raise ConfigError("tol_sq values must be positive")
        if not self.k_p or any(not 0 < k < 1 for k in self.k_p):
            raise ConfigError("k_p values must lie in (0, 1)")
        if not 0 < self.tol < 1:
            raise ConfigError("tol must lie in (0, 1)")
        if self.reference_tol_sq <= 0:
            raise ConfigError("reference_tol_sq must be positive")
        if self.s < 1 or self.m < 2 or self.h0 <= 0 or self.sigma <= 0:
            raise ConfigError("need s >= 1, m >= 2, h0 > 0, sigma > 0")
        if self.n_init < 1 or self.l_max < 1 or self.replicates < 1 or self.workers < 1:
            raise ConfigError("n_init, l_max, replicates and workers must be positive")
        if self.var_samples < 2 or self.bias_samples < 2:
            raise ConfigError("var_samples and bias_samples must be at least 2")
        if any(l < 0 for l in self.levels):
            raise ConfigError("levels must be non-negative")
        if any(not 0 < e < 1 for e in self.eps):
            raise ConfigError("eps values must lie in (0, 1)")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    # -- derived objects

    def problem(self) -> ModelProblem:
        return ModelProblem(RandomFieldParams(self.s, self.q, self.sigma), self.h0, self.m)

    def mlmc_solver(self) -> SolverSpec:
        if self.solver == "minres":
            return SolverSpec("minres", self.tol, max_iter=self.max_iter)
        return SolverSpec("direct", None)

    def mpml_solver(self) -> SolverSpec:
        if self.solver == "minres":
            return SolverSpec("minres", self.tol, max_iter=self.max_iter)
        return SolverSpec("ir", None, policy=self.policy, i_max=self.i_max)

    def engine_options(self) -> dict:
        return {
            "n_init": self.n_init,
            "L_max": self.l_max,
            "bias_r": self.bias_r,
            "cost_metric": None if self.cost_metric == "auto" else self.cost_metric,
            "rates": DecayRates(),
        }

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_ini(self) -> str:
        lines = [f"[{SECTION}]"]
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
            elif v is None:
                v = "none"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


_PARSERS = {
    "s": int, "m": int, "i_max": int, "n_init": int, "l_max": int, "replicates": int,
    "var_samples": int, "bias_samples": int, "workers": int, "seed": int,
    "q": _float, "sigma": _float, "h0": _float, "tol": _float, "bias_r": _float, "reference_tol_sq": _float,
    "max_iter": lambda t: None if t.strip().lower() in ("", "none") else int(t),
    "reference": _optional_float,
    "tol_sq": _floats, "k_p": _floats, "eps": _floats, "levels": _ints, "methods": _words,
    "forced_samples": _bool,
    "solver": lambda t: t.strip().lower(), "policy": lambda t: t.strip().lower(),
    "cost_metric": lambda t: t.strip().lower(), "out": str.strip,
}


def parse_config(text: str, **overrides) -> ExperimentConfig:
    """Parse INI text; keyword overrides (e.g. from CLI flags) win over the file."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(str(e)) from None
    extra = [s for s in cp.sections() if s != SECTION]
    if extra:
        raise ConfigError(f"unknown section(s) {extra}; use [{SECTION}]")
    values = {}
    if cp.has_section(SECTION):
        for key, raw in cp.items(SECTION):
            if key not in _PARSERS:
                raise ConfigError(f"unknown key {key!r}")
            try:
                values[key] = _PARSERS[key](raw)
            except ValueError as e:
                raise ConfigError(f"{key}: {e}") from None
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)


def load_config(path: Optional[str], **overrides) -> ExperimentConfig:
    if path is None:
        return parse_config("", **overrides)
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        cfg = parse_config(fh.read(), **overrides)
    return cfg


def read_reference(path: str) -> float:
    """Reference value from a ``reference-qoi`` JSON file."""
    with open(path, encoding="utf-8") as fh:
        return float(json.load(fh)["reference"])
