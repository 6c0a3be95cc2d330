"""Mixed-precision iterative refinement around the envelope Cholesky solver."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .cost_ledger import CostReceipt
from .fp_formats import FloatFormat, FormatOverflowError, get_format, round_array
from .sparse_linalg import NoConvergence, SparseSpd, cholesky, residual, solve_with_factor

__all__ = [
    "PrecisionQuad",
    "PrecisionPolicy",
    "IrReport",
    "IrNoConvergence",
    "ir_solve",
    "quad_for_level",
    "POLICIES",
]


@dataclass(frozen=True)
class PrecisionQuad:
    """Formats for factorisation, correction solve, storage and residual."""

    u_f: FloatFormat
    u_solve: FloatFormat
    u: FloatFormat
    u_r: FloatFormat

    def __post_init__(self):
        for name in ("u_f", "u_solve", "u", "u_r"):
            object.__setattr__(self, name, get_format(getattr(self, name)))
        if not (self.u_r <= self.u <= self.u_solve <= self.u_f):
            raise ValueError(
                f"precisions must satisfy u_r <= u <= u_solve <= u_f in unit roundoff, got {self.code}"
            )

    @classmethod
    def parse(cls, code: str) -> "PrecisionQuad":
        """Build from a four-letter code such as ``"hhss"`` (order u_f, u_solve, u, u_r)."""
        code = code.strip().lower()
        if len(code) != 4:
            raise ValueError(f"precision code must have four letters, got {code!r}")
        return cls(*(get_format(c) for c in code))

    @property
    def code(self) -> str:
        return "".join(f.name[0] for f in (self.u_f, self.u_solve, self.u, self.u_r))

    def __str__(self) -> str:
        return self.code


@dataclass(frozen=True)
class PrecisionPolicy:
    """Level to quadruple table; levels past the end reuse the last entry."""

    name: str
    quads: tuple

    @classmethod
    def from_codes(cls, name: str, codes: Sequence[str]) -> "PrecisionPolicy":
        if not codes:
            raise ValueError("a precision policy needs at least one level")
        return cls(name, tuple(PrecisionQuad.parse(c) for c in codes))


POLICIES = {
    "default": PrecisionPolicy.from_codes("default", ["hhss", "ssss", "ssdd"]),
    "quarter": PrecisionPolicy.from_codes("quarter", ["qhhh", "hhss"]),
    "double": PrecisionPolicy.from_codes("double", ["dddd"]),
}


def quad_for_level(level: int, policy="default") -> PrecisionQuad:
    if isinstance(policy, str):
        try:
            policy = POLICIES[policy]
        except KeyError:
            raise ValueError(f"unknown precision policy {policy!r}") from None
    if level < 0:
        raise ValueError("level must be non-negative")
    return policy.quads[min(level, len(policy.quads) - 1)]


@dataclass
class IrReport:
    x: np.ndarray
    rel_res: float
    refinement_steps: int
    converged: bool
    cost: CostReceipt
    history: list = field(default_factory=list)


class IrNoConvergence(NoConvergence):
    def __init__(self, msg: str, report: IrReport):
        super().__init__(msg, report.rel_res, report.refinement_steps)
        self.report = report


def _round(v, fmt: FloatFormat, what: str):
    if fmt.is_native:
        return v
    out = round_array(v, *fmt.kernel_args())
    if np.isinf(out).any():
        raise FormatOverflowError(f"{what} overflows {fmt.name}")
    return out


def ir_solve(
    A: SparseSpd,
    b: np.ndarray,
    quad: PrecisionQuad,
    eps: float,
    i_max: int = 50,
    receipt: Optional[CostReceipt] = None,
) -> IrReport:
    """Solve ``A x = b`` to relative residual ``eps`` by iterative refinement.

    The factorisation is computed once in ``quad.u_f`` and reused for every
    correction. ``A``, ``b`` and the iterates live in ``quad.u``; residuals are
    computed in ``quad.u_r`` and stored in ``quad.u``; corrections are solved
    in ``quad.u_solve``. The loop stops as soon as ``||r|| / ||b|| < eps``.
    Raises :class:`IrNoConvergence` after ``i_max`` corrections.
    """
    if isinstance(quad, str):
        quad = PrecisionQuad.parse(quad)
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    cost = CostReceipt()
    u = quad.u
    Au = A.rounded(u)
    bu = _round(np.asarray(b, dtype=np.float64), u, "right-hand side")
    bnorm = float(np.linalg.norm(bu))
    cost.charge(A.n, u)

    F = cholesky(Au, quad.u_f, cost)
    x = solve_with_factor(F, bu, quad.u_f, u, cost)

    history = []
    steps = 0
    rel = np.inf
    converged = False
    for i in range(i_max + 1):
        r = _round(residual(Au, x, bu, quad.u_r), u, "residual")
        cost.flops += 2 * A.nnz + A.n
        cost.charge(A.n, u)
        rel = float(np.linalg.norm(r)) / bnorm
        history.append(rel)
        if rel < eps:
            converged = True
            break
        if i == i_max:
            break
        d = solve_with_factor(F, r, quad.u_solve, u, cost)
        x = _round(x + d, u, "iterate")
        cost.flops += A.n
        cost.charge(A.n, u)
        steps += 1
    cost.solver_iters += steps
    if receipt is not None:
        receipt += cost
    report = IrReport(x, rel, steps, converged, cost, history)
    if not converged:
        raise IrNoConvergence(
            f"iterative refinement ({quad.code}) stalled at relative residual {rel:.3e} >= {eps:.3e}", report
        )
    return report
