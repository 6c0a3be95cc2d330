"""Model problem: -div(a grad u) = f on the unit square, u = 0 on the boundary.

The coefficient is lognormal,
``a(x, omega) = exp(sum_j omega_j j**-q sin(2 pi j x1) cos(2 pi j x2))``,
discretised with P1 elements on uniform meshes where each grid cell is split
into two right triangles along the diagonal from its lower-left corner. The
coefficient is sampled once per triangle, at the centroid. The quantity of
interest is the integral of the discrete solution over the domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .cost_ledger import CostReceipt
from .iterative_refinement import ir_solve, quad_for_level
from .sparse_linalg import SparseSpd, direct_solve, minres

__all__ = [
    "RandomFieldParams",
    "MeshLevel",
    "AssembledSystem",
    "SolverSpec",
    "LevelSample",
    "ModelProblem",
    "eval_field",
    "make_mesh",
    "assemble",
    "eval_qoi",
    "solve_system",
    "coupled_sample",
]


@dataclass(frozen=True)
class RandomFieldParams:
    s: int = 4
    q: float = 2.0
    sigma: float = 2.0

    def __post_init__(self):
        if self.s < 1:
            raise ValueError("need at least one expansion term")
        if self.q <= 0 or self.sigma <= 0:
            raise ValueError("q and sigma must be positive")


def _log_field(x1, x2, omega, q):
    omega = np.asarray(omega, dtype=float)
    j = np.arange(1, omega.size + 1)
    x1 = np.asarray(x1, dtype=float)[..., None]
    x2 = np.asarray(x2, dtype=float)[..., None]
    terms = omega * j**-q * np.sin(2 * np.pi * j * x1) * np.cos(2 * np.pi * j * x2)
    return terms.sum(axis=-1)


def eval_field(p, omega, params: RandomFieldParams):
    """Coefficient value(s) at point(s) ``p`` (last axis holds x1, x2)."""
    p = np.asarray(p, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if omega.shape != (params.s,):
        raise ValueError(f"omega must have length {params.s}")
    z = _log_field(p[..., 0], p[..., 1], omega, params.q)
    # exp overflows past ~709; a sample that large means sigma is absurd
    if np.any(z > 700.0):
        raise FloatingPointError("coefficient exponent too large")
    a = np.exp(z)
    return float(a) if a.ndim == 0 else a


@dataclass
class MeshLevel:
    level: int
    h: float
    cells: int
    nodes: np.ndarray
    triangles: np.ndarray
    interior: np.ndarray  # node id -> interior dof id, or -1

    @property
    def n_dofs(self) -> int:
        return int((self.interior >= 0).sum())

    @property
    def areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def centroids(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)


def make_mesh(level: int, h0: float = 1 / 8, m: int = 2) -> MeshLevel:
    h = h0 * float(m) ** -level
    cells = int(round(1.0 / h))
    if not math.isclose(cells * h, 1.0, rel_tol=1e-12):
        raise ValueError(f"mesh size {h} does not divide the unit square")
    k = cells + 1
    ii, jj = np.meshgrid(np.arange(k), np.arange(k), indexing="xy")
    nodes = np.column_stack([ii.ravel() * h, jj.ravel() * h])
    ci, cj = np.meshgrid(np.arange(cells), np.arange(cells), indexing="xy")
    p00 = (ci + cj * k).ravel()
    p10, p01, p11 = p00 + 1, p00 + k, p00 + k + 1
    lower = np.column_stack([p00, p10, p11])
    upper = np.column_stack([p00, p11, p01])
    triangles = np.empty((2 * p00.size, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper
    ni, nj = ii.ravel(), jj.ravel()
    inner = (ni > 0) & (ni < cells) & (nj > 0) & (nj < cells)
    interior = np.full(k * k, -1, dtype=np.int64)
    interior[inner] = np.arange(inner.sum())
    return MeshLevel(level, h, cells, nodes, triangles, interior)


def _local_stiffness(pts: np.ndarray) -> np.ndarray:
    """P1 stiffness of one triangle with unit coefficient."""
    B = np.array([pts[1] - pts[0], pts[2] - pts[0]]).T
    area = 0.5 * abs(np.linalg.det(B))
    grads_ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    G = grads_ref @ np.linalg.inv(B)
    return area * G @ G.T


class _LevelOperator:
    """Precomputed assembly map for one mesh: triangle contributions -> CSR slots."""

    def __init__(self, mesh: MeshLevel, params: RandomFieldParams):
        tri = mesh.triangles
        pts = mesh.nodes[tri]
        # only two congruent triangle shapes occur; compute each local matrix directly
        local = np.array([_local_stiffness(p) for p in pts[:2]])
        K = np.empty((tri.shape[0], 3, 3))
        K[0::2] = local[0]
        K[1::2] = local[1]
        dof = mesh.interior[tri]
        rows = np.repeat(dof, 3, axis=1).reshape(-1)
        cols = np.tile(dof, (1, 3)).reshape(-1)
        keep = (rows >= 0) & (cols >= 0)
        self.tri_of = np.repeat(np.arange(tri.shape[0]), 9)[keep]
        self.kvals = K.reshape(-1)[keep]
        n = mesh.n_dofs
        pattern = sp.csr_matrix((np.ones(keep.sum()), (rows[keep], cols[keep])), shape=(n, n))
        pattern.sum_duplicates()
        pattern.sort_indices()
        self.indptr = pattern.indptr.astype(np.int64)
        self.indices = pattern.indices.astype(np.int64)
        # slot of each contribution in the CSR data array
        lookup = sp.csr_matrix((np.arange(pattern.nnz) + 1, self.indices, self.indptr), shape=(n, n))
        self.slot = np.asarray(lookup[rows[keep], cols[keep]]).ravel() - 1
        self.nnz = pattern.nnz
        # load vector for f = 1 and QoI weights: integral of each hat function
        areas = mesh.areas
        w = np.zeros(mesh.nodes.shape[0])
        np.add.at(w, tri.ravel(), np.repeat(areas / 3.0, 3))
        self.node_weights = w
        self.weights = w[mesh.interior >= 0]
        c = mesh.centroids
        j = np.arange(1, params.s + 1)
        self.basis = j**-params.q * np.sin(2 * np.pi * j * c[:, :1]) * np.cos(2 * np.pi * j * c[:, 1:2])
        self.template: Optional[SparseSpd] = None

    def matrix(self, a_tri: np.ndarray) -> SparseSpd:
        data = np.bincount(self.slot, weights=a_tri[self.tri_of] * self.kvals, minlength=self.nnz)
        if self.template is None:
            self.template = SparseSpd(self.indptr, self.indices, data)
            return self.template
        return self.template.with_values(data)


@dataclass
class AssembledSystem:
    A: SparseSpd
    b: np.ndarray
    qoi_weights: np.ndarray
    level: int = 0


def assemble(mesh: MeshLevel, omega, params: RandomFieldParams, f: Callable | float = 1.0, _op=None) -> AssembledSystem:
    """Assemble stiffness, load and QoI weights on the interior nodes.

    ``f`` may be a constant or a callable of the centroid coordinates; for a
    callable the load uses the centroid value on each triangle.
    """
    op = _op if _op is not None else _LevelOperator(mesh, params)
    omega = np.asarray(omega, dtype=float)
    z = op.basis @ omega
    if np.any(z > 700.0):
        raise FloatingPointError("coefficient exponent too large")
    A = op.matrix(np.exp(z))
    if callable(f):
        fv = np.asarray(f(mesh.centroids), dtype=float)
        w = np.zeros(mesh.nodes.shape[0])
        np.add.at(w, mesh.triangles.ravel(), np.repeat(fv * mesh.areas / 3.0, 3))
        b = w[mesh.interior >= 0]
    else:
        b = float(f) * op.weights
    return AssembledSystem(A, b, op.weights.copy(), mesh.level)


def eval_qoi(system: AssembledSystem, x: np.ndarray) -> float:
    """Integral of the discrete solution, ``w . x``."""
    x = np.asarray(x, dtype=float)
    if x.shape != system.qoi_weights.shape:
        raise ValueError("solution has the wrong length")
    return float(system.qoi_weights @ x)


@dataclass(frozen=True)
class SolverSpec:
    """How each linear system is solved.

    ``kind`` is ``"direct"`` (binary64 Cholesky, no refinement), ``"minres"``
    or ``"ir"`` (iterative refinement with the level's precision quadruple).
    ``tol`` is the fixed relative-residual tolerance used when no
    level-dependent accuracy is supplied.
    """

    kind: str = "minres"
    tol: Optional[float] = 1e-6
    policy: str = "default"
    max_iter: Optional[int] = None
    i_max: int = 50

    def __post_init__(self):
        if self.kind not in ("direct", "minres", "ir"):
            raise ValueError(f"unknown solver kind {self.kind!r}")
        if self.kind == "minres" and self.tol is None:
            raise ValueError("minres needs a tolerance")


def solve_system(system: AssembledSystem, solver: SolverSpec, eps: Optional[float], receipt: CostReceipt):
    """Solve one assembled system; ``eps`` overrides the spec's fixed tolerance."""
    tol = solver.tol if eps is None else eps
    if solver.kind == "direct":
        return direct_solve(system.A, system.b, receipt=receipt)
    if solver.kind == "minres":
        return minres(system.A, system.b, tol, solver.max_iter, receipt).x
    if tol is None:
        raise ValueError("iterative refinement needs a tolerance")
    quad = quad_for_level(system.level, solver.policy)
    return ir_solve(system.A, system.b, quad, tol, solver.i_max, receipt).x


@dataclass
class LevelSample:
    level: int
    y: float
    q_fine: float
    q_coarse: float
    cost: CostReceipt
    fine_cost: CostReceipt
    coarse_cost: CostReceipt


class ModelProblem:
    """Mesh hierarchy ``h_l = h0 m**-l`` plus cached assembly maps."""

    def __init__(self, params: RandomFieldParams = RandomFieldParams(), h0: float = 1 / 8, m: int = 2, f: float = 1.0):
        self.params = params
        self.h0 = h0
        self.m = m
        self.f = f
        self._meshes: dict[int, MeshLevel] = {}
        self._ops: dict[int, _LevelOperator] = {}

    def h(self, level: int) -> float:
        return self.h0 * float(self.m) ** -level

    def mesh(self, level: int) -> MeshLevel:
        if level not in self._meshes:
            self._meshes[level] = make_mesh(level, self.h0, self.m)
        return self._meshes[level]

    def _op(self, level: int) -> _LevelOperator:
        if level not in self._ops:
            self._ops[level] = _LevelOperator(self.mesh(level), self.params)
        return self._ops[level]

    def system(self, level: int, omega) -> AssembledSystem:
        return assemble(self.mesh(level), omega, self.params, self.f, _op=self._op(level))

    def qoi(self, level: int, omega, solver: SolverSpec, eps: Optional[float] = None, receipt=None) -> float:
        sysm = self.system(level, omega)
        rec = receipt if receipt is not None else CostReceipt()
        return eval_qoi(sysm, solve_system(sysm, solver, eps, rec))


def coupled_sample(
    problem: ModelProblem,
    level: int,
    omega,
    solver: SolverSpec,
    eps_fine: Optional[float] = None,
    eps_coarse: Optional[float] = None,
) -> LevelSample:
    """Evaluate ``Q_l(omega) - Q_{l-1}(omega)`` with one shared draw.

    On level 0 only the fine term is computed. ``eps_fine`` / ``eps_coarse``
    are the relative-residual targets for the two solves; ``None`` falls back
    to ``solver.tol``. Solver failures propagate.
    """
    if level < 0:
        raise ValueError("level must be non-negative")
    fine_cost = CostReceipt()
    qf = problem.qoi(level, omega, solver, eps_fine, fine_cost)
    coarse_cost = CostReceipt()
    qc = 0.0
    if level > 0:
        qc = problem.qoi(level - 1, omega, solver, eps_coarse, coarse_cost)
    return LevelSample(level, qf - qc, qf, qc, fine_cost + coarse_cost, fine_cost, coarse_cost)
