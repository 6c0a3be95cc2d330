"""Adaptive multilevel Monte Carlo with level-dependent solver accuracy.

``run_adaptive`` implements the adaptive loop: start with two levels, draw
the pending samples on every level, refresh sample means, variances and
per-sample costs, update the sample targets, add a level while the finest
correction is too large, and stop once the bias test passes and the
estimated variance is below ``TOL**2 / 2``. With ``k_p`` set, each level's
linear solves are only carried out to the relative residual returned by
``precision_schedule``; with ``k_p=None`` every solve uses the solver's fixed
tolerance (standard MLMC).
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .cost_ledger import CostReceipt
from .pde_model import ModelProblem, SolverSpec, coupled_sample
from .rng import omega_draw, stream_key

__all__ = [
    "DecayRates",
    "LevelStats",
    "RunResult",
    "LmaxExceeded",
    "precision_schedule",
    "optimal_samples",
    "sample_variance",
    "run_adaptive",
    "run_fixed",
    "mean_ci",
    "StudySpec",
    "run_bundle",
    "run_replicates",
    "MseRow",
    "MseTable",
    "mse_experiment",
    "reference_qoi",
    "DecayRow",
    "decay_study",
    "decay_csv",
    "fit_slope",
]


@dataclass(frozen=True)
class DecayRates:
    """Bias/variance/cost exponents; defaults are those of the FE model problem."""

    alpha: float = 2.0
    beta: float = 4.0
    gamma: float = 2.0
    alpha1: float = 2.0
    alpha2: float = 1.0
    beta1: float = 4.0
    beta2: float = 2.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "alpha1", "alpha2", "beta1", "beta2"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def precision_schedule(L: int, h0: float, m: int, k_p: float, rates: DecayRates = DecayRates()) -> list[float]:
    """Relative-residual targets for levels ``0..L``.

    Coarse levels get ``(k_p h_l**beta1)**(1/beta2)``; the finest level takes
    the smaller of that and ``(k_p h_L**alpha1)**(1/alpha2)``.
    """
    if L < 1:
        raise ValueError("need L >= 1")
    if not 0.0 < k_p <= 1.0:
        raise ValueError("k_p must lie in (0, 1]")
    hs = [h0 * float(m) ** -l for l in range(L + 1)]
    eps = [(k_p * h**rates.beta1) ** (1.0 / rates.beta2) for h in hs]
    eps[L] = min(eps[L], (k_p * hs[L] ** rates.alpha1) ** (1.0 / rates.alpha2))
    return eps


def optimal_samples(variances: Sequence[float], costs: Sequence[float], tol: float) -> np.ndarray:
    """Sample counts minimising cost subject to ``sum V_l / N_l = TOL**2 / 2``."""
    V = np.asarray(variances, dtype=float)
    C = np.asarray(costs, dtype=float)
    if np.any(V < 0) or np.any(C <= 0) or tol <= 0:
        raise ValueError("need V >= 0, C > 0 and TOL > 0")
    total = np.sum(np.sqrt(V * C))
    n = np.sqrt(V / C) * 2.0 / tol**2 * total
    # guard the ceiling against representation noise (e.g. 1.0000000000000002)
    return np.ceil(n * (1 - 1e-12)).astype(np.int64)


def sample_variance(sum_y: float, sum_y2: float, n: int) -> float:
    """Biased (1/N) sample variance from running sums, clipped at zero."""
    if n == 0:
        return 0.0
    mean = sum_y / n
    return max(sum_y2 / n - mean * mean, 0.0)


@dataclass
class LevelStats:
    n: int = 0
    sum_y: float = 0.0
    sum_y2: float = 0.0
    cost: CostReceipt = field(default_factory=CostReceipt)
    eps: list = field(default_factory=list)  # accuracy used per batch

    @property
    def mean(self) -> float:
        return self.sum_y / self.n if self.n else 0.0

    @property
    def var(self) -> float:
        return sample_variance(self.sum_y, self.sum_y2, self.n)

    def add(self, y: float, cost: CostReceipt) -> None:
        self.n += 1
        self.sum_y += y
        self.sum_y2 += y * y
        self.cost += cost


@dataclass
class RunResult:
    estimate: float
    levels: list
    method: str
    tol: float
    cost_metric: str
    eps: list = field(default_factory=list)

    @property
    def L(self) -> int:
        return len(self.levels) - 1

    @property
    def samples(self) -> list[int]:
        return [s.n for s in self.levels]

    @property
    def total_cost(self) -> CostReceipt:
        return CostReceipt.merge(s.cost for s in self.levels)

    def level_cost(self, metric: Optional[str] = None) -> list[float]:
        """Total cost spent on each level in ``metric`` units."""
        metric = metric or self.cost_metric
        return [float(s.cost.metric(metric)) for s in self.levels]

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "tol": self.tol,
            "estimate": self.estimate,
            "L": self.L,
            "cost_metric": self.cost_metric,
            "levels": [
                {
                    "level": l,
                    "N": s.n,
                    "mean": s.mean,
                    "var": s.var,
                    "eps": self.eps[l] if l < len(self.eps) else None,
                    **s.cost.as_dict(),
                }
                for l, s in enumerate(self.levels)
            ],
        }


class LmaxExceeded(RuntimeError):
    def __init__(self, msg: str, partial: RunResult):
        super().__init__(msg)
        self.partial = partial


def _default_sampler(problem: ModelProblem, seed: int, replicate: int):
    key = stream_key(seed, replicate)
    p = problem.params

    def draw(level: int, index: int) -> np.ndarray:
        return omega_draw(seed, replicate, level, index, p.s, p.sigma, key)

    return draw


def _per_sample_cost(stats: LevelStats, metric: str, level: int, m: int, gamma: float) -> float:
    if metric == "apriori":
        return float(m) ** (gamma * level)
    c = stats.cost.metric(metric) / max(stats.n, 1)
    return max(c, 1e-300)


def run_adaptive(
    problem: ModelProblem,
    solver: SolverSpec,
    tol: float,
    k_p: Optional[float] = None,
    seed: int = 0,
    replicate: int = 0,
    *,
    n_init: int = 100,
    L_max: int = 6,
    rates: DecayRates = DecayRates(),
    cost_metric: Optional[str] = None,
    bias_r: float = 1.0,
    sampler: Optional[Callable[[int, int], np.ndarray]] = None,
) -> RunResult:
    """One adaptive MLMC (``k_p=None``) or MPML run to mean-square tolerance ``tol**2``.

    ``cost_metric`` picks the per-sample cost used for sample allocation:
    ``"flops"``, ``"mem_bits"`` or ``"apriori"`` (``m**(gamma l)``). The default
    is FLOPs for MINRES and memory bits for the Cholesky-based solvers.
    Raises :class:`LmaxExceeded` (carrying the partial result) if the bias
    test still fails on level ``L_max``.
    """
    if tol <= 0:
        raise ValueError("TOL must be positive")
    if n_init < 1:
        raise ValueError("n_init must be at least 1")
    if k_p is not None and not 0.0 < k_p < 1.0:
        raise ValueError("k_p must lie in (0, 1)")
    if cost_metric is None:
        cost_metric = "flops" if solver.kind == "minres" else "mem_bits"
    draw = sampler or _default_sampler(problem, seed, replicate)
    m = problem.m
    method = "mlmc" if k_p is None else "mpml"
    bias_bound = (bias_r * m**rates.alpha - 1.0) / math.sqrt(2.0) * tol

    L = 1
    stats = [LevelStats(), LevelStats()]
    target = [n_init, n_init]
    eps: list = [None, None]

    def result() -> RunResult:
        est = math.fsum(s.mean for s in stats)
        return RunResult(est, stats, method, tol, cost_metric, list(eps))

    while True:
        if k_p is not None:
            eps = precision_schedule(L, problem.h0, m, k_p, rates)
        else:
            eps = [None] * (L + 1)
        for l in range(L + 1):
            st = stats[l]
            if target[l] > st.n:
                st.eps.append(eps[l])
            while st.n < target[l]:
                omega = draw(l, st.n)
                smp = coupled_sample(problem, l, omega, solver, eps[l], eps[l - 1] if l > 0 else None)
                st.add(smp.y, smp.cost)
        V = [s.var for s in stats]
        C = [_per_sample_cost(s, cost_metric, l, m, rates.gamma) for l, s in enumerate(stats)]
        n_opt = optimal_samples(V, C, tol)
        target = [max(t, int(n)) for t, n in zip(target, n_opt)]
        if abs(stats[L].mean) > bias_bound:
            if L >= L_max:
                raise LmaxExceeded(f"bias test still failing on level {L} = L_max", result())
            L += 1
            stats.append(LevelStats())
            target.append(n_init)
            continue
        if sum(v / s.n for v, s in zip(V, stats)) <= tol**2 / 2 and all(t <= s.n for t, s in zip(target, stats)):
            return result()


def run_fixed(
    problem: ModelProblem,
    solver: SolverSpec,
    samples: Sequence[int],
    k_p: Optional[float] = None,
    seed: int = 0,
    replicate: int = 0,
    *,
    rates: DecayRates = DecayRates(),
    cost_metric: Optional[str] = None,
    tol: float = float("nan"),
    sampler=None,
) -> RunResult:
    """Multilevel estimate with prescribed ``N_l`` (no adaptivity).

    With ``k_p`` set the accuracies follow the schedule for ``L = len(samples) - 1``.
    Uses the same random stream addressing as :func:`run_adaptive`, so two
    calls with equal seeds see identical draws.
    """
    if cost_metric is None:
        cost_metric = "flops" if solver.kind == "minres" else "mem_bits"
    draw = sampler or _default_sampler(problem, seed, replicate)
    L = len(samples) - 1
    if L < 0:
        raise ValueError("need at least one level")
    if k_p is not None and L >= 1:
        eps = precision_schedule(L, problem.h0, problem.m, k_p, rates)
    else:
        eps = [None] * (L + 1)
    stats = []
    for l, n in enumerate(samples):
        st = LevelStats()
        st.eps.append(eps[l])
        for k in range(int(n)):
            smp = coupled_sample(problem, l, draw(l, k), solver, eps[l], eps[l - 1] if l > 0 else None)
            st.add(smp.y, smp.cost)
        stats.append(st)
    est = math.fsum(s.mean for s in stats)
    return RunResult(est, stats, "mlmc" if k_p is None else "mpml", tol, cost_metric, eps)


def mean_ci(values: Sequence[float], z: float = 1.959963984540054) -> tuple[float, float, float]:
    """Mean with a normal-approximation confidence interval."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise ValueError("need at least two values for a confidence interval")
    mu = float(v.mean())
    half = z * float(v.std(ddof=1)) / math.sqrt(v.size)
    return mu, mu - half, mu + half


# ---------------------------------------------------------------------------
# replicate studies


@dataclass(frozen=True)
class StudySpec:
    """Everything one replicate needs; picklable for worker processes."""

    problem: ModelProblem
    mlmc_solver: SolverSpec
    mpml_solver: SolverSpec
    tol: float
    k_ps: tuple
    seed: int
    methods: tuple = ("mlmc", "mpml")
    forced: bool = False
    options: tuple = ()  # sorted (key, value) pairs for run_adaptive


def run_bundle(spec: StudySpec, replicate: int) -> dict:
    """All requested runs for one replicate: ``{"mlmc": r, ("mpml", k_p): r, ...}``.

    With ``spec.forced`` the MPML runs reuse the sample counts of the MLMC run
    of the same replicate, so both see identical draws.
    """
    opts = dict(spec.options)
    out = {}
    if "mlmc" in spec.methods or spec.forced:
        out["mlmc"] = run_adaptive(spec.problem, spec.mlmc_solver, spec.tol, None, spec.seed, replicate, **opts)
    if "mpml" in spec.methods:
        for kp in spec.k_ps:
            if spec.forced:
                out[("mpml", kp)] = run_fixed(
                    spec.problem, spec.mpml_solver, out["mlmc"].samples, kp, spec.seed, replicate,
                    rates=opts.get("rates", DecayRates()), cost_metric=opts.get("cost_metric"), tol=spec.tol,
                )
            else:
                out[("mpml", kp)] = run_adaptive(spec.problem, spec.mpml_solver, spec.tol, kp, spec.seed, replicate, **opts)
    return out


def _bundle_task(args):
    return run_bundle(*args)


def run_replicates(spec: StudySpec, replicates: Sequence[int], workers: int = 1) -> list[dict]:
    """One bundle per replicate index; output order follows ``replicates``."""
    tasks = [(spec, r) for r in replicates]
    if workers <= 1 or len(tasks) <= 1:
        return [_bundle_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_bundle_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


@dataclass
class MseRow:
    tol_sq: float
    method: str
    k_p: Optional[float]
    mse: float
    ci_low: float
    ci_high: float
    total_cost: float  # mean per run, in the run's cost metric
    cost_gain: Optional[float]  # mean MLMC cost / mean cost of this row
    samples: list  # mean N_l per level
    samples_ci: list  # (low, high) per level
    max_L: int
    runs: int


MSE_COLUMNS = ("tol_sq", "method", "k_p", "mse", "ci_low", "ci_high", "total_cost", "cost_gain", "max_L", "runs")
SCHEMA_VERSION = 1


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class MseTable:
    rows: list
    reference: float
    cost_metric: str

    def row(self, tol_sq: float, method: str, k_p=None) -> MseRow:
        for r in self.rows:
            if math.isclose(r.tol_sq, tol_sq) and r.method == method and (k_p is None or r.k_p == k_p):
                return r
        raise KeyError((tol_sq, method, k_p))

    def to_csv(self) -> str:
        width = max((len(r.samples) for r in self.rows), default=0)
        buf = io.StringIO()
        buf.write(
            f"# mpml mse table; schema {SCHEMA_VERSION}; reference {self.reference!r}; cost metric {self.cost_metric}\n"
        )
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(MSE_COLUMNS) + [f"N_{l}" for l in range(width)])
        for r in self.rows:
            ns = [float(v) for v in r.samples] + [0.0] * (width - len(r.samples))
            w.writerow([_fmt(getattr(r, c)) for c in MSE_COLUMNS] + [repr(v) for v in ns])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(
            {
                "schema": SCHEMA_VERSION,
                "reference": self.reference,
                "cost_metric": self.cost_metric,
                "rows": [dataclasses.asdict(r) for r in self.rows],
            },
            indent=2,
            sort_keys=True,
        )


def summarize_runs(runs: Sequence[RunResult], reference: float, tol_sq: float, k_p=None, baseline_cost=None) -> MseRow:
    err2 = [(r.estimate - reference) ** 2 for r in runs]
    mse, lo, hi = mean_ci(err2)
    width = max(len(r.levels) for r in runs)
    ns = np.zeros((len(runs), width))
    for i, r in enumerate(runs):
        ns[i, : len(r.levels)] = r.samples
    cis = [list(mean_ci(ns[:, l])[1:]) for l in range(width)]
    cost = float(np.mean([r.total_cost.metric(r.cost_metric) for r in runs]))
    gain = None if baseline_cost is None else baseline_cost / cost
    return MseRow(
        tol_sq, runs[0].method, k_p, mse, lo, hi, cost, gain, [float(v) for v in ns.mean(axis=0)], cis,
        max(r.L for r in runs), len(runs),
    )


def mse_experiment(
    problem: ModelProblem,
    tol_sqs: Sequence[float],
    reference: float,
    *,
    replicates: int,
    mlmc_solver: SolverSpec,
    mpml_solver: SolverSpec,
    k_p: float | Sequence[float] = 0.05,
    seed: int = 0,
    workers: int = 1,
    methods: Sequence[str] = ("mlmc", "mpml"),
    forced: bool = False,
    on_row: Optional[Callable[[MseRow], None]] = None,
    **options,
) -> MseTable:
    """Replicated MLMC and MPML runs at each ``TOL**2``; MSE against ``reference``.

    ``on_row`` is called as soon as each row is final, so callers can flush
    partial output if a later tolerance fails.
    """
    if replicates < 2:
        raise ValueError("need at least two replicates")
    kps = (float(k_p),) if np.ndim(k_p) == 0 else tuple(float(k) for k in k_p)
    metric = options.get("cost_metric") or ("flops" if mlmc_solver.kind == "minres" else "mem_bits")
    opts = tuple(sorted(options.items()))
    rows = []
    for tol_sq in tol_sqs:
        spec = StudySpec(problem, mlmc_solver, mpml_solver, math.sqrt(tol_sq), kps, seed, tuple(methods), forced, opts)
        bundles = run_replicates(spec, range(replicates), workers)
        new = []
        base = None
        if "mlmc" in bundles[0]:
            mlmc = summarize_runs([b["mlmc"] for b in bundles], reference, tol_sq)
            base = mlmc.total_cost
            if "mlmc" in methods:
                new.append(mlmc)
        if "mpml" in methods:
            for kp in kps:
                new.append(summarize_runs([b[("mpml", kp)] for b in bundles], reference, tol_sq, kp, base))
        for r in new:
            rows.append(r)
            if on_row is not None:
                on_row(r)
    return MseTable(rows, reference, metric)


def reference_qoi(
    problem: ModelProblem,
    tol_sq: float = 2e-8,
    seed: int = 0,
    replicate: int = 10**6,
    **options,
) -> RunResult:
    """High-accuracy MLMC estimate with binary64 direct solves.

    Uses a replicate index far from those of the experiments so the
    reference draws are independent of them.
    """
    return run_adaptive(problem, SolverSpec("direct", None), math.sqrt(tol_sq), None, seed, replicate, **options)


# ---------------------------------------------------------------------------
# decay of bias and variance against solver accuracy


@dataclass
class DecayRow:
    level: int
    eps: Optional[float]  # None: binary64 direct solve
    var: float
    bias: float
    ci: float  # half-width of the 95% interval for the bias estimate
    var_samples: int
    bias_samples: int


DECAY_COLUMNS = ("level", "eps", "var", "bias", "ci", "var_samples", "bias_samples")


def decay_study(
    problem: ModelProblem,
    levels: Sequence[int],
    eps_values: Sequence[Optional[float]],
    *,
    var_samples: int = 100,
    bias_samples: int = 1000,
    seed: int = 0,
    replicate: int = 0,
    max_iter: Optional[int] = None,
) -> list[DecayRow]:
    """Sample variance of the correction and bias against solver accuracy.

    ``var`` is the (1/N) variance of ``Q_l - Q_{l-1}`` with both solves done
    by MINRES to relative residual ``eps`` (``Q_0`` alone on level 0).
    ``bias`` is ``|mean(Q_l - Q_{l+1})|`` with ``Q_l`` at accuracy ``eps`` and
    ``Q_{l+1}`` from a binary64 direct solve on the same draw. An ``eps`` of
    ``None`` means a direct solve throughout.
    """
    if not levels:
        raise ValueError("empty level list")
    if not eps_values:
        raise ValueError("empty accuracy list")
    draw = _default_sampler(problem, seed, replicate)
    direct = SolverSpec("direct", None)
    rows = []
    for l in levels:
        exact_next = {}
        for e in eps_values:
            solver = direct if e is None else SolverSpec("minres", e, max_iter=max_iter)
            ys = np.array([
                coupled_sample(problem, l, draw(l, k), solver, e, e).y for k in range(var_samples)
            ])
            diffs = np.empty(bias_samples)
            for k in range(bias_samples):
                omega = draw(l + 1, k)
                if k not in exact_next:
                    exact_next[k] = problem.qoi(l + 1, omega, direct)
                diffs[k] = problem.qoi(l, omega, solver, e) - exact_next[k]
            mu = float(diffs.mean())
            ci = 1.959963984540054 * float(diffs.std(ddof=1)) / math.sqrt(bias_samples)
            rows.append(DecayRow(l, e, float(ys.var()), abs(mu), ci, var_samples, bias_samples))
    return rows


def decay_csv(rows: Sequence[DecayRow]) -> str:
    buf = io.StringIO()
    buf.write(f"# mpml decay study; schema {SCHEMA_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DECAY_COLUMNS)
    for r in rows:
        w.writerow([_fmt(getattr(r, c)) for c in DECAY_COLUMNS])
    return buf.getvalue()


def fit_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of ``log2 y`` against ``x``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or np.any(y <= 0):
        raise ValueError("need at least two positive values")
    return float(np.polyfit(x, np.log2(y), 1)[0])
