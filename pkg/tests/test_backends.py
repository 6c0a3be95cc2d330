"""Backend parity.

Kernels that round to an emulated format must agree bitwise between the
numba loops and the numpy fallback. Binary64 MINRES uses BLAS reductions on
the numpy path, whose summation order differs from the sequential loop, so
there only agreement to the solve tolerance is required.
"""

import os
import subprocess
import sys

import pytest

from mpml import _accel

SCRIPT = r"""
import hashlib
import numpy as np
from mpml import _accel
from mpml.fp_formats import FORMATS, round_array
from mpml.iterative_refinement import ir_solve
from mpml.pde_model import ModelProblem, SolverSpec, coupled_sample
from mpml.rng import omega_draw
from mpml.sparse_linalg import cholesky, minres, residual

h = hashlib.sha256()
rng = np.random.default_rng(1)
xs = rng.standard_normal(20000) * 10.0 ** rng.uniform(-8, 2, 20000)
for name in ("q43", "half", "single"):
    fmt = FORMATS[name]
    h.update(round_array(np.clip(xs, -200, 200), *fmt.kernel_args()).tobytes())
p = ModelProblem()
for level in (0, 1, 2):
    omega = omega_draw(0, 0, level, 0, 4, 2.0)
    s = p.system(level, omega)
    for fmt in ("q43", "half", "single", "double"):
        try:
            F = cholesky(s.A, fmt)
            h.update(F.L.tobytes())
        except Exception as e:
            h.update(type(e).__name__.encode())
    for fmt in ("half", "single", "double"):
        h.update(residual(s.A, np.ones(s.A.n), s.b, fmt).tobytes())
    h.update(ir_solve(s.A, s.b, ("hhss", "ssss", "ssdd")[level], 1e-4).x.tobytes())
    h.update(repr(coupled_sample(p, level, omega, SolverSpec("ir", None), 1e-4, 1e-4).y).encode())
    mr = minres(s.A, s.b, 1e-8)
    q = coupled_sample(p, level, omega, SolverSpec("minres", 1e-8)).y
print(_accel.backend(), h.hexdigest(), repr(mr.rel_res), repr(float(s.qoi_weights @ mr.x)), repr(q))
"""


def run(no_numba):
    env = dict(os.environ)
    env.pop("MPML_NO_NUMBA", None)
    if no_numba:
        env["MPML_NO_NUMBA"] = "1"
    out = subprocess.run([sys.executable, "-c", SCRIPT], env=env, capture_output=True, text=True, check=True)
    return out.stdout.split()


@pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")
def test_backend_parity():
    fast = run(False)
    slow = run(True)
    assert fast[0] == "numba" and slow[0] == "numpy"
    assert fast[1] == slow[1]
    rel_f, *vals_f = map(float, fast[2:])
    rel_s, *vals_s = map(float, slow[2:])
    assert rel_f <= 1e-8 and rel_s <= 1e-8
    assert vals_f == pytest.approx(vals_s, rel=1e-6)


@pytest.mark.parametrize("value, disabled", [("1", True), ("yes", True), ("0", False), ("", False)])
def test_flag_parsing(value, disabled):
    env = dict(os.environ, MPML_NO_NUMBA=value)
    out = subprocess.run(
        [sys.executable, "-c", "from mpml import _accel; print(_accel.backend())"],
        env=env, capture_output=True, text=True, check=True,
    ).stdout.strip()
    if disabled or not _accel.HAVE_NUMBA:
        assert out == "numpy"
    else:
        assert out == "numba"
