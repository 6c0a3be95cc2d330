"""Time the hot kernels under both backends.

Usage::

    python3 benchmarks/bench_kernels.py [--levels 2 3] [--repeat 5]

Each backend runs in its own interpreter because the switch is read at
import time. Reported numbers are the best of ``--repeat`` runs, after one
warm-up call (which also triggers numba compilation).
"""

import argparse
import json
import os
import subprocess
import sys

CHILD = r"""
import json, sys, time
from mpml import _accel
from mpml.iterative_refinement import ir_solve, quad_for_level
from mpml.pde_model import ModelProblem
from mpml.rng import omega_draw
from mpml.sparse_linalg import cholesky, minres

levels, repeat = json.loads(sys.argv[1])
p = ModelProblem()

def best(fn):
    fn()
    out = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t)
    return min(out)

rows = []
for level in levels:
    s = p.system(level, omega_draw(0, 0, level, 0, 4, 2.0))
    quad = quad_for_level(min(level, 2), "default")
    rows.append(dict(
        level=level, n=s.A.n,
        cholesky_half=best(lambda: cholesky(s.A, "half")),
        cholesky_double=best(lambda: cholesky(s.A, "double")),
        ir=best(lambda: ir_solve(s.A, s.b, quad, 1e-4)),
        minres=best(lambda: minres(s.A, s.b, 1e-8)),
    ))
print(json.dumps(dict(backend=_accel.backend(), rows=rows)))
"""


def run(levels, repeat, no_numba):
    env = dict(os.environ)
    env.pop("MPML_NO_NUMBA", None)
    if no_numba:
        env["MPML_NO_NUMBA"] = "1"
    out = subprocess.run([sys.executable, "-c", CHILD, json.dumps([levels, repeat])],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--levels", type=int, nargs="+", default=[2, 3])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    res = [run(args.levels, args.repeat, flag) for flag in (False, True)]
    keys = ["cholesky_half", "cholesky_double", "ir", "minres"]
    print(f"{'level':>5} {'n':>6} {'kernel':>16} " + " ".join(f"{r['backend']:>10}" for r in res) + "   ratio")
    for i, level in enumerate(args.levels):
        for k in keys:
            t = [r["rows"][i][k] for r in res]
            print(f"{level:>5} {res[0]['rows'][i]['n']:>6} {k:>16} "
                  + " ".join(f"{v * 1e3:>8.2f}ms" for v in t) + f"   {t[1] / t[0]:6.1f}x")


if __name__ == "__main__":
    main()
