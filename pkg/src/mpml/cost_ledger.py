"""Cost accounting for solver work and the analytic MPML cost-gain bound.

Two cost measures are tracked side by side: floating-point operations
performed inside the solvers, and memory traffic measured in bits, where each
stored or loaded scalar is charged the width of the format it lives in.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .fp_formats import FloatFormat, get_format

__all__ = [
    "CostReceipt",
    "charge_array",
    "predicted_gain",
    "finite_level_gain",
    "level_cost_ratio",
    "cost_report_rows",
    "write_cost_report",
    "COST_REPORT_COLUMNS",
]


def charge_array(n: int, fmt) -> int:
    """Bits moved when ``n`` scalars of format ``fmt`` are stored or loaded."""
    if n < 0:
        raise ValueError("element count must be non-negative")
    return int(n) * get_format(fmt).bits


@dataclass
class CostReceipt:
    flops: int = 0
    mem_bits: int = 0
    factor_nnz: int = 0
    solver_iters: int = 0

    def charge(self, n: int, fmt: FloatFormat) -> None:
        self.mem_bits += charge_array(n, fmt)

    def __add__(self, other: "CostReceipt") -> "CostReceipt":
        if not isinstance(other, CostReceipt):
            return NotImplemented
        return CostReceipt(
            self.flops + other.flops,
            self.mem_bits + other.mem_bits,
            self.factor_nnz + other.factor_nnz,
            self.solver_iters + other.solver_iters,
        )

    def __iadd__(self, other: "CostReceipt") -> "CostReceipt":
        self.flops += other.flops
        self.mem_bits += other.mem_bits
        self.factor_nnz += other.factor_nnz
        self.solver_iters += other.solver_iters
        return self

    @classmethod
    def merge(cls, receipts: Iterable["CostReceipt"]) -> "CostReceipt":
        total = cls()
        for r in receipts:
            total += r
        return total

    def metric(self, name: str) -> int:
        if name not in ("flops", "mem_bits", "factor_nnz", "solver_iters"):
            raise ValueError(f"unknown cost metric {name!r}")
        return getattr(self, name)

    def as_dict(self) -> dict:
        return asdict(self)


def predicted_gain(q: float, m: int, beta: float, gamma: float) -> float:
    """Asymptotic bound on cost(MPML)/cost(MLMC) when only level 0 gets cheaper.

    ``q`` is the factor by which the coarsest-level cost per sample shrinks.
    The bound is ``q + m**((gamma - beta)/2) * (1 - q)``; it is only
    meaningful when variance decays faster than cost grows.
    """
    if beta <= gamma:
        raise ValueError("the cost-gain bound requires beta > gamma")
    if not 0.0 < q <= 1.0:
        raise ValueError("q must lie in (0, 1]")
    return q + m ** ((gamma - beta) / 2.0) * (1.0 - q)


def finite_level_gain(q: float, m: int, beta: float, gamma: float, L: int) -> float:
    """Same bound for a finite hierarchy of ``L + 1`` levels."""
    if beta <= gamma:
        raise ValueError("the cost-gain bound requires beta > gamma")
    rho = m ** ((gamma - beta) / 2.0)
    total = (1.0 - rho ** (L + 1)) / (1.0 - rho)
    return (q + rho * (1.0 - rho**L) / (1.0 - rho)) / total


def level_cost_ratio(costs: Sequence[float], samples: Sequence[float]) -> np.ndarray:
    """Ratios ``C[l+1] N[l+1] / (C[l] N[l])`` of total per-level cost."""
    c = np.asarray(costs, dtype=float)
    n = np.asarray(samples, dtype=float)
    if c.shape != n.shape:
        raise ValueError("costs and samples must have equal length")
    total = c * n
    if total.size < 2:
        return np.empty(0)
    return total[1:] / total[:-1]


COST_REPORT_COLUMNS = ("level", "method", "flops", "mem_bits", "factor_nnz", "samples")


def cost_report_rows(method: str, per_level: Sequence[CostReceipt], samples: Sequence[int]) -> list[dict]:
    rows = []
    for lvl, (rec, n) in enumerate(zip(per_level, samples)):
        rows.append(
            {
                "level": lvl,
                "method": method,
                "flops": rec.flops,
                "mem_bits": rec.mem_bits,
                "factor_nnz": rec.factor_nnz,
                "samples": int(n),
            }
        )
    return rows


def write_cost_report(rows: Iterable[Mapping], stream: io.TextIOBase | None = None) -> str:
    buf = stream if stream is not None else io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=COST_REPORT_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row[k] for k in COST_REPORT_COLUMNS})
    return buf.getvalue() if stream is None else ""
