"""Command-line experiment runner.

Subcommands write CSV/JSON data files into ``--out`` and print a short
summary. Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 maximum level exceeded.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from typing import Optional

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config, read_reference
from .cost_ledger import COST_REPORT_COLUMNS, CostReceipt, cost_report_rows
from .fp_formats import FormatOverflowError
from .iterative_refinement import IrNoConvergence, PrecisionQuad, ir_solve, quad_for_level
from .multilevel_engine import (
    SCHEMA_VERSION,
    LmaxExceeded,
    MseTable,
    StudySpec,
    decay_csv,
    decay_study,
    mse_experiment,
    precision_schedule,
    reference_qoi,
    run_replicates,
)
from .rng import omega_draw
from .sparse_linalg import BreakdownError, NoConvergence, write_matrix_market

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_LMAX = 0, 2, 3, 4
REFERENCE_FILE = "reference.json"


def _out_path(cfg: ExperimentConfig, name: str) -> str:
    os.makedirs(cfg.out, exist_ok=True)
    return os.path.join(cfg.out, name)


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def schedule_table(cfg: ExperimentConfig, max_level: int = 4) -> list[list[float]]:
    k_p = cfg.k_p[0]
    return [precision_schedule(L, cfg.h0, cfg.m, k_p) for L in range(1, max_level + 1)]


def cmd_schedule(cfg: ExperimentConfig, args) -> int:
    if args.max_level < 1:
        raise ConfigError("max level must be at least 1")
    rows = schedule_table(cfg, args.max_level)
    buf = io.StringIO()
    buf.write(f"# mpml precision schedule; schema {SCHEMA_VERSION}; k_p {cfg.k_p[0]!r}; h0 {cfg.h0!r}; m {cfg.m}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["L"] + [f"eps_{l}" for l in range(args.max_level + 1)])
    for L, eps in enumerate(rows, start=1):
        w.writerow([L] + [repr(e) for e in eps])
    _write(_out_path(cfg, "schedule.csv"), buf.getvalue())
    print(f"{'L':>2}  " + "  ".join(f"{'l=' + str(l):>8}" for l in range(args.max_level + 1)))
    for L, eps in enumerate(rows, start=1):
        print(f"{L:>2}  " + "  ".join(f"{e:>8.1e}" for e in eps))
    return EXIT_OK


def cmd_decay(cfg: ExperimentConfig, args) -> int:
    if not cfg.levels:
        raise ConfigError("empty level list")
    rows = decay_study(
        cfg.problem(), cfg.levels, list(cfg.eps), var_samples=cfg.var_samples, bias_samples=cfg.bias_samples,
        seed=cfg.seed, max_iter=cfg.max_iter,
    )
    _write(_out_path(cfg, "decay.csv"), decay_csv(rows))
    for r in rows:
        print(f"level {r.level}  eps {r.eps:.1e}  var {r.var:.3e}  bias {r.bias:.3e} +- {r.ci:.1e}")
    return EXIT_OK


def _reference(cfg: ExperimentConfig) -> float:
    if cfg.reference is not None:
        return cfg.reference
    path = os.path.join(cfg.out, REFERENCE_FILE)
    if os.path.isfile(path):
        return read_reference(path)
    print(f"no reference value configured; computing one at TOL^2={cfg.reference_tol_sq:g}", file=sys.stderr)
    return _compute_reference(cfg)["reference"]


def _compute_reference(cfg: ExperimentConfig) -> dict:
    opts = cfg.engine_options()
    opts["cost_metric"] = "mem_bits"
    res = reference_qoi(cfg.problem(), cfg.reference_tol_sq, cfg.seed, **opts)
    info = {
        "schema": SCHEMA_VERSION,
        "reference": res.estimate,
        "tol_sq": cfg.reference_tol_sq,
        "seed": cfg.seed,
        "samples": res.samples,
        "level_means": [s.mean for s in res.levels],
        "level_vars": [s.var for s in res.levels],
    }
    _write(_out_path(cfg, REFERENCE_FILE), json.dumps(info, indent=2) + "\n")
    return info


def cmd_reference(cfg: ExperimentConfig, args) -> int:
    info = _compute_reference(cfg)
    print(f"reference QoI {info['reference']!r}  (TOL^2={cfg.reference_tol_sq:g}, N={info['samples']})")
    return EXIT_OK


def cmd_run(cfg: ExperimentConfig, args) -> int:
    ref = _reference(cfg)
    partial: list = []
    metric = cfg.cost_metric if cfg.cost_metric != "auto" else ("flops" if cfg.solver == "minres" else "mem_bits")
    status = EXIT_OK
    try:
        table = mse_experiment(
            cfg.problem(), cfg.tol_sq, ref, replicates=cfg.replicates, mlmc_solver=cfg.mlmc_solver(),
            mpml_solver=cfg.mpml_solver(), k_p=cfg.k_p, seed=cfg.seed, workers=cfg.workers,
            methods=cfg.methods, forced=cfg.forced_samples, on_row=partial.append, **cfg.engine_options(),
        )
    except LmaxExceeded:
        table = MseTable(partial, ref, metric)
        status = EXIT_LMAX
        print("maximum level exceeded; writing partial results", file=sys.stderr)
    _write(_out_path(cfg, "mse.csv"), table.to_csv())
    _write(_out_path(cfg, "mse.json"), table.to_json() + "\n")
    for r in table.rows:
        gain = "" if r.cost_gain is None else f"  gain {r.cost_gain:.3f}"
        kp = "" if r.k_p is None else f" k_p={r.k_p:g}"
        print(
            f"TOL^2 {r.tol_sq:.1e}  {r.method}{kp:<9} MSE {r.mse:.3e} [{r.ci_low:.3e}, {r.ci_high:.3e}]"
            f"  cost {r.total_cost:.4e}{gain}"
        )
    return status


def cost_report_runs(cfg: ExperimentConfig, workers: int = 1) -> list[dict]:
    """Per-level cost totals summed over replicates, for each TOL^2 and method."""
    problem = cfg.problem()
    opts = tuple(sorted(cfg.engine_options().items()))
    out = []
    for tol_sq in cfg.tol_sq:
        spec = StudySpec(problem, cfg.mlmc_solver(), cfg.mpml_solver(), math.sqrt(tol_sq), cfg.k_p, cfg.seed,
                         cfg.methods, cfg.forced_samples, opts)
        bundles = run_replicates(spec, range(cfg.replicates), workers)
        for key in bundles[0]:
            method = key if isinstance(key, str) else f"mpml(k_p={key[1]:g})"
            width = max(len(b[key].levels) for b in bundles)
            per_level = [CostReceipt() for _ in range(width)]
            samples = [0] * width
            for b in bundles:
                for l, st in enumerate(b[key].levels):
                    per_level[l] += st.cost
                    samples[l] += st.n
            out.append({"tol_sq": tol_sq, "method": method, "levels": per_level, "samples": samples})
    return out


def cmd_cost_report(cfg: ExperimentConfig, args) -> int:
    reports = cost_report_runs(cfg, cfg.workers)
    buf = io.StringIO()
    buf.write(f"# mpml cost report; schema {SCHEMA_VERSION}; totals over {cfg.replicates} replicates\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("tol_sq",) + COST_REPORT_COLUMNS)
    for rep in reports:
        for row in cost_report_rows(rep["method"], rep["levels"], rep["samples"]):
            w.writerow([repr(rep["tol_sq"])] + [row[c] for c in COST_REPORT_COLUMNS])
    _write(_out_path(cfg, "cost_report.csv"), buf.getvalue())
    totals: dict = {}
    for rep in reports:
        t = CostReceipt.merge(rep["levels"])
        totals.setdefault(rep["tol_sq"], {})[rep["method"]] = t
        print(f"TOL^2 {rep['tol_sq']:.1e}  {rep['method']:<16} flops {t.flops:.4e}  mem_bits {t.mem_bits:.4e}")
    for tol_sq, d in totals.items():
        if "mlmc" in d:
            for name, t in d.items():
                if name != "mlmc":
                    print(
                        f"TOL^2 {tol_sq:.1e}  {name:<16} flop gain {d['mlmc'].flops / max(t.flops, 1):.3f}"
                        f"  memory gain {d['mlmc'].mem_bits / max(t.mem_bits, 1):.3f}"
                    )
    return EXIT_OK


def _omega(cfg: ExperimentConfig, args) -> np.ndarray:
    return omega_draw(cfg.seed, args.replicate, args.level, args.index, cfg.s, cfg.sigma)


def cmd_ir_trace(cfg: ExperimentConfig, args) -> int:
    if args.level < 0:
        raise ConfigError("level must be non-negative")
    problem = cfg.problem()
    sysm = problem.system(args.level, _omega(cfg, args))
    quad = PrecisionQuad.parse(args.quad) if args.quad else quad_for_level(args.level, cfg.policy)
    if args.eps is not None:
        eps = args.eps
    else:
        L = max(args.level, 1)
        eps = precision_schedule(L, cfg.h0, cfg.m, cfg.k_p[0])[args.level]
    try:
        rep = ir_solve(sysm.A, sysm.b, quad, eps, cfg.i_max)
        history, ok = rep.history, True
    except IrNoConvergence as e:
        rep, history, ok = e.report, e.report.history, False
    buf = io.StringIO()
    buf.write(f"# mpml ir trace; schema {SCHEMA_VERSION}; level {args.level}; quad {quad.code}; eps {eps!r}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "rel_res"])
    for i, r in enumerate(history):
        w.writerow([i, repr(r)])
    _write(_out_path(cfg, "ir_trace.csv"), buf.getvalue())
    for i, r in enumerate(history):
        print(f"step {i:>3}  rel_res {r:.3e}")
    print(f"{quad.code}: {'converged' if ok else 'did not converge'} after {rep.refinement_steps} corrections "
          f"(eps {eps:.2e}, mem_bits {rep.cost.mem_bits})")
    return EXIT_OK if ok else EXIT_SOLVER


def cmd_dump_system(cfg: ExperimentConfig, args) -> int:
    if args.level < 0:
        raise ConfigError("level must be non-negative")
    sysm = cfg.problem().system(args.level, _omega(cfg, args))
    path = _out_path(cfg, f"system_l{args.level}_r{args.replicate}_k{args.index}.mtx")
    with open(path, "w", encoding="utf-8") as fh:
        write_matrix_market(sysm.A, sysm.b, fh)
    print(f"wrote {path} (n={sysm.A.n}, nnz={sysm.A.nnz})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI experiment config")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--workers", type=int, help="worker processes for replicate runs")
    common.add_argument("--out", metavar="DIR", help="output directory")

    p = argparse.ArgumentParser(prog="mpml", description="Mixed-precision multilevel Monte Carlo experiments")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("schedule", parents=[common], help="solver accuracy per level for L=1..max")
    s.add_argument("--max-level", type=int, default=4)
    s.set_defaults(func=cmd_schedule)

    s = sub.add_parser("decay", parents=[common], help="variance and bias against solver accuracy")
    s.set_defaults(func=cmd_decay)

    s = sub.add_parser("run", parents=[common], help="replicated MLMC/MPML runs and MSE table")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("cost-report", parents=[common], help="per-level cost totals")
    s.set_defaults(func=cmd_cost_report)

    s = sub.add_parser("reference-qoi", parents=[common], help="compute and cache the reference QoI")
    s.set_defaults(func=cmd_reference)

    for name, func, helptext in (
        ("ir-trace", cmd_ir_trace, "residual history of one iterative refinement solve"),
        ("dump-system", cmd_dump_system, "write one FE system in MatrixMarket format"),
    ):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--level", type=int, default=0)
        s.add_argument("--replicate", type=int, default=0)
        s.add_argument("--index", type=int, default=0)
        if name == "ir-trace":
            s.add_argument("--quad", help="four-letter precision code, e.g. hhss")
            s.add_argument("--eps", type=float, help="target relative residual")
        s.set_defaults(func=func)
    return p


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, seed=args.seed, workers=args.workers, out=args.out)
        return args.func(cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except LmaxExceeded as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_LMAX
    except (NoConvergence, BreakdownError, FormatOverflowError) as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return EXIT_SOLVER


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
