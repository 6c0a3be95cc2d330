"""Sparse SPD matrices, emulated-precision Cholesky, and MINRES.

The Cholesky factor is computed on a bandwidth-reducing (reverse
Cuthill-McKee) permutation of the matrix and stored in envelope form: row
``i`` of ``L`` keeps every column from its first structural non-zero up to the
diagonal. All fill happens inside that envelope, so its size is the number of
stored factor entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee

from . import _kernels as K
from .cost_ledger import CostReceipt
from .fp_formats import DOUBLE, FloatFormat, FormatOverflowError, get_format, round_array

__all__ = [
    "BreakdownError",
    "NoConvergence",
    "SparseSpd",
    "CholFactor",
    "cholesky",
    "solve_with_factor",
    "direct_solve",
    "minres",
    "MinresResult",
    "residual",
    "residual_norms",
    "dense_cholesky_solve",
    "write_matrix_market",
]


class BreakdownError(ArithmeticError):
    """A Cholesky pivot was non-positive after rounding."""

    def __init__(self, msg: str, index: int = -1, fmt: Optional[FloatFormat] = None):
        super().__init__(msg)
        self.index = index
        self.fmt = fmt


class NoConvergence(RuntimeError):
    """An iterative method stopped without meeting its tolerance."""

    def __init__(self, msg: str, rel_res: float, iterations: int):
        super().__init__(msg)
        self.rel_res = rel_res
        self.iterations = iterations


class _Symbolic:
    """Ordering and envelope structure shared by all matrices with one pattern."""

    def __init__(self, n, indptr, indices):
        graph = sp.csr_matrix((np.ones(indices.size), indices, indptr), shape=(n, n))
        perm = np.asarray(reverse_cuthill_mckee(graph, symmetric_mode=True), dtype=np.int64)
        inv = np.empty(n, dtype=np.int64)
        inv[perm] = np.arange(n)
        rows = np.repeat(np.arange(n), np.diff(indptr))
        pr, pc = inv[rows], inv[indices]
        lower = pc <= pr
        first = np.arange(n, dtype=np.int64)
        np.minimum.at(first, pr[lower], pc[lower])
        lengths = np.arange(n) - first + 1
        ptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(lengths, out=ptr[1:])
        self.n = n
        self.perm = perm
        self.inv = inv
        self.first = first
        self.ptr = ptr
        # entries of the original CSR data that land in the lower envelope
        self.src = np.nonzero(lower)[0]
        self.dst = ptr[pr[lower]] + pc[lower] - first[pr[lower]]
        self._col_rows = None

    @property
    def env_size(self) -> int:
        return int(self.ptr[-1])

    @property
    def col_rows(self):
        # only needed by the vectorised kernels
        if self._col_rows is None:
            cols = [[] for _ in range(self.n)]
            for i in range(self.n):
                for j in range(int(self.first[i]), i):
                    cols[j].append(i)
            self._col_rows = [np.array(c, dtype=np.int64) for c in cols]
        return self._col_rows

    def scatter(self, data: np.ndarray) -> np.ndarray:
        env = np.zeros(self.env_size)
        env[self.dst] = data[self.src]
        return env


@dataclass
class SparseSpd:
    """Symmetric positive-definite matrix in CSR form with the full pattern stored."""

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    _symbolic: Optional[_Symbolic] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.indptr = np.ascontiguousarray(self.indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)

    @property
    def n(self) -> int:
        return self.indptr.size - 1

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    @classmethod
    def from_scipy(cls, M) -> "SparseSpd":
        M = sp.csr_matrix(M)
        M.sort_indices()
        return cls(M.indptr, M.indices, M.data)

    @classmethod
    def from_dense(cls, M: np.ndarray) -> "SparseSpd":
        return cls.from_scipy(sp.csr_matrix(np.asarray(M, dtype=float)))

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.data, self.indices, self.indptr), shape=(self.n, self.n))

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def with_values(self, data: np.ndarray) -> "SparseSpd":
        """Same sparsity pattern (and cached symbolic analysis), new values."""
        out = SparseSpd(self.indptr, self.indices, data)
        out._symbolic = self._symbolic
        return out

    def rounded(self, fmt) -> "SparseSpd":
        fmt = get_format(fmt)
        if fmt.is_native:
            return self
        vals = round_array(self.data, *fmt.kernel_args())
        if np.isinf(vals).any():
            raise FormatOverflowError(f"matrix entries overflow {fmt.name}")
        return self.with_values(vals)

    def symbolic(self) -> _Symbolic:
        if self._symbolic is None:
            self._symbolic = _Symbolic(self.n, self.indptr, self.indices)
        return self._symbolic

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.to_scipy() @ x

    def check(self) -> None:
        """Validate the structural invariants (symmetry, positive diagonal, finiteness)."""
        if not np.all(np.isfinite(self.data)):
            raise ValueError("matrix has non-finite entries")
        M = self.to_scipy()
        if abs(M - M.T).max() > 0:
            raise ValueError("matrix is not symmetric")
        if np.any(M.diagonal() <= 0):
            raise ValueError("matrix diagonal must be strictly positive")


@dataclass
class CholFactor:
    """Envelope Cholesky factor ``L`` with ``L L^T = P A P^T``.

    Values are representable in ``fmt`` but stored in binary64 arrays.
    """

    L: np.ndarray
    symbolic: _Symbolic
    fmt: FloatFormat
    flops: int

    @property
    def n(self) -> int:
        return self.symbolic.n

    @property
    def nnz(self) -> int:
        return self.L.size

    @property
    def permutation(self) -> np.ndarray:
        return self.symbolic.perm

    def to_dense(self) -> np.ndarray:
        """Dense lower-triangular factor in the permuted ordering."""
        s = self.symbolic
        out = np.zeros((s.n, s.n))
        for i in range(s.n):
            out[i, s.first[i] : i + 1] = self.L[s.ptr[i] : s.ptr[i + 1]]
        return out


def cholesky(A: SparseSpd, fmt=DOUBLE, receipt: Optional[CostReceipt] = None) -> CholFactor:
    """Factorise ``A`` with every operation rounded to ``fmt``.

    The matrix entries are rounded to ``fmt`` first. The stored factor is
    charged ``nnz(L)`` scalars of width ``fmt`` on ``receipt``.
    """
    fmt = get_format(fmt)
    sym = A.symbolic()
    env = sym.scatter(A.data)
    fargs = fmt.kernel_args()
    if not fmt.is_native:
        env = round_array(env, *fargs)
        if np.isinf(env).any():
            raise FormatOverflowError(f"matrix entries overflow {fmt.name}")
    col_rows = None if K.HAVE_NUMBA else sym.col_rows
    L, flops, status, where = K.run_cholesky(sym.first, sym.ptr, env, fargs, col_rows)
    flops = int(flops)
    if receipt is not None:
        receipt.flops += flops
        receipt.factor_nnz += sym.env_size
        receipt.charge(sym.env_size, fmt)
    if status == K.BREAKDOWN:
        raise BreakdownError(f"non-positive pivot at row {where} in {fmt.name} Cholesky", int(where), fmt)
    if status == K.OVERFLOW:
        raise FormatOverflowError(f"{fmt.name} Cholesky overflowed at row {where}")
    return CholFactor(L, sym, fmt, flops)


def solve_with_factor(
    F: CholFactor,
    r: np.ndarray,
    solve_fmt=None,
    out_fmt=None,
    receipt: Optional[CostReceipt] = None,
) -> np.ndarray:
    """Solve ``A x = r`` by forward and backward substitution in ``solve_fmt``.

    ``solve_fmt`` defaults to the factor's format. The result is rounded to
    ``out_fmt`` (default ``solve_fmt``). The intermediate vector and the
    result are charged to ``receipt`` at their formats.
    """
    solve_fmt = get_format(solve_fmt) if solve_fmt is not None else F.fmt
    out_fmt = get_format(out_fmt) if out_fmt is not None else solve_fmt
    s = F.symbolic
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (s.n,):
        raise ValueError(f"right-hand side has shape {r.shape}, expected ({s.n},)")
    fargs = solve_fmt.kernel_args()
    rp = r[s.perm]
    L = F.L
    if not solve_fmt.is_native:
        rp = round_array(rp, *fargs)
        if solve_fmt.unit_roundoff > F.fmt.unit_roundoff:
            L = round_array(L, *fargs)
    col_rows = None if K.HAVE_NUMBA else s.col_rows
    y = K.run_forward(s.first, s.ptr, L, rp, fargs, col_rows)
    xp = K.run_backward(s.first, s.ptr, L, y, fargs)
    if np.isinf(y).any() or np.isinf(xp).any():
        raise FormatOverflowError(f"substitution overflowed {solve_fmt.name}")
    x = xp[s.inv]
    if not out_fmt.is_native and out_fmt.unit_roundoff > solve_fmt.unit_roundoff:
        x = round_array(x, *out_fmt.kernel_args())
        if np.isinf(x).any():
            raise FormatOverflowError(f"solution overflows {out_fmt.name}")
    if receipt is not None:
        receipt.flops += K.substitution_flops(s.first)
        receipt.charge(s.n, solve_fmt)
        receipt.charge(s.n, out_fmt)
    return x


def direct_solve(A: SparseSpd, b: np.ndarray, fmt=DOUBLE, receipt: Optional[CostReceipt] = None) -> np.ndarray:
    """Factorise and solve once in a single format, no refinement."""
    fmt = get_format(fmt)
    F = cholesky(A, fmt, receipt)
    if receipt is not None:
        receipt.charge(A.n, fmt)  # right-hand side
    return solve_with_factor(F, b, fmt, fmt, receipt)


@dataclass
class MinresResult:
    x: np.ndarray
    rel_res: float
    iters: int
    flops: int


def minres(
    A: SparseSpd,
    b: np.ndarray,
    tol: float,
    max_iter: Optional[int] = None,
    receipt: Optional[CostReceipt] = None,
) -> MinresResult:
    """Unpreconditioned MINRES in binary64 with a relative-residual stop.

    Iterates until the true residual satisfies ``||b - A x|| / ||b|| <= tol``.
    The returned ``rel_res`` is recomputed from ``b - A x``. Raises
    :class:`NoConvergence` after ``max_iter`` (default ``50 n``) iterations.
    """
    b = np.ascontiguousarray(b, dtype=np.float64)
    if not 0.0 < tol < 1.0:
        raise ValueError("tol must lie in (0, 1)")
    if not np.any(b):
        raise ValueError("right-hand side must be non-zero")
    if max_iter is None:
        max_iter = 50 * A.n
    x, rel, itn, flops, ok = K.run_minres(A.indptr, A.indices, A.data, b, float(tol), int(max_iter))
    if receipt is not None:
        receipt.flops += int(flops)
        receipt.solver_iters += int(itn)
    if not ok:
        raise NoConvergence(f"MINRES reached relative residual {rel:.3e} > {tol:.3e}", float(rel), int(itn))
    return MinresResult(x, float(rel), int(itn), int(flops))


def residual(A: SparseSpd, x: np.ndarray, b: np.ndarray, fmt=DOUBLE) -> np.ndarray:
    """``b - A x`` with every product, sum and difference rounded to ``fmt``."""
    fmt = get_format(fmt)
    fargs = fmt.kernel_args()
    x = np.ascontiguousarray(x, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if x.shape != (A.n,) or b.shape != (A.n,):
        raise ValueError("dimension mismatch")
    data = A.data
    if not fmt.is_native:
        data = round_array(data, *fargs)
        x = round_array(x, *fargs)
        b = round_array(b, *fargs)
    r = K.run_residual(A.indptr, A.indices, data, x, b, fargs)
    if np.isinf(r).any():
        raise FormatOverflowError(f"residual overflows {fmt.name}")
    return r


def residual_norms(A: SparseSpd, x: np.ndarray, b: np.ndarray, fmt=DOUBLE) -> float:
    """Relative residual ``||b - A x|| / ||b||``; residual in ``fmt``, norms in binary64."""
    r = residual(A, x, b, fmt)
    return float(np.linalg.norm(r) / np.linalg.norm(b))


def dense_cholesky_solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Binary64 dense reference solve (LAPACK)."""
    import scipy.linalg as sla

    return sla.cho_solve(sla.cho_factor(np.asarray(A, dtype=float), lower=True), b)


def write_matrix_market(A: SparseSpd, b: Optional[np.ndarray], stream) -> None:
    """Coordinate-format export: header, size line, 1-based triplets, then b."""
    stream.write("%%MatrixMarket matrix coordinate real symmetric\n")
    M = sp.tril(A.to_scipy()).tocoo()
    order = np.lexsort((M.row, M.col))
    stream.write(f"{A.n} {A.n} {M.nnz}\n")
    for k in order:
        stream.write(f"{M.row[k] + 1} {M.col[k] + 1} {M.data[k]:.17g}\n")
    if b is not None:
        stream.write(f"% rhs {b.size}\n")
        for v in b:
            stream.write(f"% {v:.17g}\n")
