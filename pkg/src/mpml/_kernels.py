"""Inner loops of the solvers.

Each kernel has two implementations that perform the same sequence of
rounded operations:

* ``*_loop``: scalar loops, compiled by numba when available;
* ``*_vec``: numpy code vectorised across independent rows/columns.

For the emulated-precision kernels (matvec residual, Cholesky, triangular
solves) the two paths produce bitwise identical results. The ``run_*``
dispatchers pick the compiled loop when numba is active and the vectorised
path otherwise.

Format arguments are passed as ``(sig_bits, emin, max_abs, native)``.
Kernels signal failure through an integer status instead of raising:
0 = ok, 1 = non-positive pivot, 2 = overflow.
"""

from __future__ import annotations

import math

import numpy as np

from ._accel import HAVE_NUMBA, njit
from .fp_formats import round_array, round_scalar

OK, BREAKDOWN, OVERFLOW = 0, 1, 2


# ---------------------------------------------------------------------------
# residual r = b - A x with every operation rounded


@njit
def residual_loop(indptr, indices, data, x, b, sig, emin, xmax, native):
    n = b.shape[0]
    r = np.empty(n)
    for i in range(n):
        acc = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            prod = round_scalar(data[p] * x[indices[p]], sig, emin, xmax, native)
            acc = round_scalar(acc + prod, sig, emin, xmax, native)
        r[i] = round_scalar(b[i] - acc, sig, emin, xmax, native)
    return r


def residual_vec(indptr, indices, data, x, b, sig, emin, xmax, native):
    n = b.shape[0]
    lengths = np.diff(indptr)
    acc = np.zeros(n)
    for pos in range(int(lengths.max(initial=0))):
        rows = np.nonzero(lengths > pos)[0]
        p = indptr[rows] + pos
        prod = round_array(data[p] * x[indices[p]], sig, emin, xmax, native)
        acc[rows] = round_array(acc[rows] + prod, sig, emin, xmax, native)
    return round_array(b - acc, sig, emin, xmax, native)


# ---------------------------------------------------------------------------
# envelope (profile) Cholesky, row i stores columns first[i]..i


@njit
def envelope_cholesky_loop(first, ptr, env, sig, emin, xmax, native):
    n = first.shape[0]
    L = env.copy()
    flops = 0
    for i in range(n):
        fi = first[i]
        pi = ptr[i]
        for j in range(fi, i + 1):
            fj = first[j]
            pj = ptr[j]
            s = L[pi + j - fi]
            k0 = fi if fi > fj else fj
            for k in range(k0, j):
                prod = round_scalar(L[pi + k - fi] * L[pj + k - fj], sig, emin, xmax, native)
                s = round_scalar(s - prod, sig, emin, xmax, native)
            flops += 2 * (j - k0)
            if j < i:
                v = round_scalar(s / L[pj + j - fj], sig, emin, xmax, native)
            else:
                if not s > 0.0:
                    return L, flops + 1, BREAKDOWN, i
                v = round_scalar(math.sqrt(s), sig, emin, xmax, native)
            flops += 1
            if math.isinf(v) or math.isinf(s):
                return L, flops, OVERFLOW, i
            L[pi + j - fi] = v
    return L, flops, OK, -1


def envelope_cholesky_vec(first, ptr, env, sig, emin, xmax, native, col_rows):
    """Column-by-column variant; ``col_rows[j]`` lists rows i > j with first[i] <= j."""
    n = first.shape[0]
    L = env.copy()
    flops = 0

    def rnd(v):
        return round_array(v, sig, emin, xmax, native)

    for j in range(n):
        fj = int(first[j])
        pj = int(ptr[j])
        # diagonal entry
        s = L[pj + j - fj]
        for k in range(fj, j):
            ljk = L[pj + k - fj]
            s = round_scalar(s - round_scalar(ljk * ljk, sig, emin, xmax, native), sig, emin, xmax, native)
        flops += 2 * (j - fj) + 1
        if not s > 0.0:
            return L, flops, BREAKDOWN, j
        d = round_scalar(math.sqrt(s), sig, emin, xmax, native)
        if math.isinf(d) or math.isinf(s):
            return L, flops, OVERFLOW, j
        L[pj + j - fj] = d
        rows = col_rows[j]
        if rows.size == 0:
            continue
        fr = first[rows]
        pos = ptr[rows] + j - fr
        acc = L[pos]
        for k in range(fj, j):
            m = fr <= k
            if not m.any():
                continue
            idx = np.nonzero(m)[0]
            lik = L[ptr[rows[idx]] + k - fr[idx]]
            acc[idx] = rnd(acc[idx] - rnd(lik * L[pj + k - fj]))
        # rows whose envelope starts after fj contribute shorter dot products
        k0 = np.maximum(fr, fj)
        flops += int(np.sum(2 * (j - k0) + 1))
        vals = rnd(acc / d)
        if np.isinf(vals).any() or np.isinf(acc).any():
            bad = rows[np.nonzero(np.isinf(vals) | np.isinf(acc))[0][0]]
            return L, flops, OVERFLOW, int(bad)
        L[pos] = vals
    return L, flops, OK, -1


# ---------------------------------------------------------------------------
# triangular solves with the envelope factor


@njit
def forward_loop(first, ptr, L, r, sig, emin, xmax, native):
    n = first.shape[0]
    y = np.empty(n)
    for i in range(n):
        fi = first[i]
        pi = ptr[i]
        s = r[i]
        for k in range(fi, i):
            s = round_scalar(s - round_scalar(L[pi + k - fi] * y[k], sig, emin, xmax, native), sig, emin, xmax, native)
        y[i] = round_scalar(s / L[pi + i - fi], sig, emin, xmax, native)
    return y


@njit
def backward_loop(first, ptr, L, y, sig, emin, xmax, native):
    n = first.shape[0]
    acc = y.copy()
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        fi = first[i]
        pi = ptr[i]
        xi = round_scalar(acc[i] / L[pi + i - fi], sig, emin, xmax, native)
        x[i] = xi
        for k in range(fi, i):
            acc[k] = round_scalar(acc[k] - round_scalar(L[pi + k - fi] * xi, sig, emin, xmax, native), sig, emin, xmax, native)
    return x


def forward_vec(first, ptr, L, r, sig, emin, xmax, native, col_rows):
    n = first.shape[0]
    acc = r.copy()
    y = np.empty(n)
    for j in range(n):
        fj = first[j]
        yj = round_scalar(acc[j] / L[ptr[j] + j - fj], sig, emin, xmax, native)
        y[j] = yj
        rows = col_rows[j]
        if rows.size:
            lij = L[ptr[rows] + j - first[rows]]
            acc[rows] = round_array(acc[rows] - round_array(lij * yj, sig, emin, xmax, native), sig, emin, xmax, native)
    return y


def backward_vec(first, ptr, L, y, sig, emin, xmax, native):
    n = first.shape[0]
    acc = y.copy()
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        fi = first[i]
        pi = ptr[i]
        xi = round_scalar(acc[i] / L[pi + i - fi], sig, emin, xmax, native)
        x[i] = xi
        if i > fi:
            seg = L[pi : pi + i - fi]
            acc[fi:i] = round_array(acc[fi:i] - round_array(seg * xi, sig, emin, xmax, native), sig, emin, xmax, native)
    return x


def substitution_flops(first) -> int:
    """Operations of one forward plus one backward sweep."""
    n = first.shape[0]
    off = int(np.sum(np.arange(n) - first))
    return 2 * (2 * off + n)


# ---------------------------------------------------------------------------
# MINRES in binary64 (Paige-Saunders recurrences, no preconditioner).
# When the recurrence says converged but the true residual does not, the
# method restarts from the current iterate; this closes the residual gap.


@njit
def _csr_matvec(indptr, indices, data, x, out):
    for i in range(out.shape[0]):
        s = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            s += data[p] * x[indices[p]]
        out[i] = s


@njit
def minres_loop(indptr, indices, data, b, tol, max_iter):
    n = b.shape[0]
    nnz = indptr[n]
    x = np.zeros(n)
    r1 = np.empty(n)
    r2 = np.empty(n)
    y = np.empty(n)
    w = np.zeros(n)
    w1 = np.zeros(n)
    w2 = np.zeros(n)
    v = np.zeros(n)
    tmp = np.zeros(n)
    bnorm = 0.0
    for i in range(n):
        bnorm += b[i] * b[i]
    bnorm = math.sqrt(bnorm)
    flops = 2 * n
    target = tol * bnorm
    eps = 2.220446049250313e-16
    itn = 0
    relres = 1.0
    rnorm = bnorm
    for i in range(n):
        y[i] = b[i]
    while itn < max_iter:
        # (re)start from the current iterate; y holds the true residual
        for i in range(n):
            r1[i] = y[i]
            r2[i] = y[i]
            w[i] = 0.0
            w2[i] = 0.0
        oldb = 0.0
        beta = rnorm
        dbar = 0.0
        epsln = 0.0
        phibar = rnorm
        cs = -1.0
        sn = 0.0
        inner = 0
        while itn < max_iter:
            itn += 1
            inner += 1
            s = 1.0 / beta
            for i in range(n):
                v[i] = s * y[i]
            _csr_matvec(indptr, indices, data, v, y)
            flops += n + 2 * nnz
            if inner >= 2:
                c = beta / oldb
                for i in range(n):
                    y[i] -= c * r1[i]
                flops += 2 * n
            alfa = 0.0
            for i in range(n):
                alfa += v[i] * y[i]
            c = alfa / beta
            nrm = 0.0
            for i in range(n):
                y[i] -= c * r2[i]
                r1[i] = r2[i]
                r2[i] = y[i]
                nrm += y[i] * y[i]
            flops += 6 * n
            oldb = beta
            beta = math.sqrt(nrm)
            oldeps = epsln
            delta = cs * dbar + sn * alfa
            gbar = sn * dbar - cs * alfa
            epsln = sn * beta
            dbar = -cs * beta
            gamma = math.hypot(gbar, beta)
            if gamma < eps:
                gamma = eps
            cs = gbar / gamma
            sn = beta / gamma
            phi = cs * phibar
            phibar = sn * phibar
            denom = 1.0 / gamma
            for i in range(n):
                w1[i] = w2[i]
                w2[i] = w[i]
                w[i] = (v[i] - oldeps * w1[i] - delta * w2[i]) * denom
                x[i] += phi * w[i]
            flops += 7 * n
            if phibar <= target or beta == 0.0:
                break
        # true residual, also the restart vector
        _csr_matvec(indptr, indices, data, x, tmp)
        rnorm = 0.0
        for i in range(n):
            y[i] = b[i] - tmp[i]
            rnorm += y[i] * y[i]
        rnorm = math.sqrt(rnorm)
        flops += 2 * nnz + 3 * n
        relres = rnorm / bnorm
        if relres <= tol:
            return x, relres, itn, flops, True
        if rnorm == 0.0:
            break
    return x, relres, itn, flops, relres <= tol


def minres_vec(indptr, indices, data, b, tol, max_iter):
    import scipy.sparse as sp

    n = b.shape[0]
    nnz = int(indptr[n])
    A = sp.csr_matrix((data, indices, indptr), shape=(n, n))
    x = np.zeros(n)
    bnorm = float(np.linalg.norm(b))
    flops = 2 * n
    target = tol * bnorm
    eps = np.finfo(float).eps
    itn = 0
    relres = 1.0
    y = b.copy()
    rnorm = bnorm
    while itn < max_iter:
        r1 = y.copy()
        r2 = y.copy()
        w = np.zeros(n)
        w2 = np.zeros(n)
        oldb, beta, dbar, epsln, phibar = 0.0, rnorm, 0.0, 0.0, rnorm
        cs, sn = -1.0, 0.0
        inner = 0
        while itn < max_iter:
            itn += 1
            inner += 1
            v = (1.0 / beta) * y
            y = A @ v
            flops += n + 2 * nnz
            if inner >= 2:
                y = y - (beta / oldb) * r1
                flops += 2 * n
            alfa = float(v @ y)
            y = y - (alfa / beta) * r2
            r1 = r2
            r2 = y
            flops += 6 * n
            oldb = beta
            beta = float(np.linalg.norm(y))
            oldeps = epsln
            delta = cs * dbar + sn * alfa
            gbar = sn * dbar - cs * alfa
            epsln = sn * beta
            dbar = -cs * beta
            gamma = max(math.hypot(gbar, beta), eps)
            cs = gbar / gamma
            sn = beta / gamma
            phi = cs * phibar
            phibar = sn * phibar
            w1 = w2
            w2 = w
            w = (v - oldeps * w1 - delta * w2) / gamma
            x = x + phi * w
            flops += 7 * n
            if phibar <= target or beta == 0.0:
                break
        y = b - A @ x
        rnorm = float(np.linalg.norm(y))
        flops += 2 * nnz + 3 * n
        relres = rnorm / bnorm
        if relres <= tol:
            return x, relres, itn, flops, True
        if rnorm == 0.0:
            break
    return x, relres, itn, flops, relres <= tol


# ---------------------------------------------------------------------------
# dispatch


def run_residual(indptr, indices, data, x, b, fargs):
    if HAVE_NUMBA:
        return residual_loop(indptr, indices, data, x, b, *fargs)
    return residual_vec(indptr, indices, data, x, b, *fargs)


def run_cholesky(first, ptr, env, fargs, col_rows):
    if HAVE_NUMBA:
        return envelope_cholesky_loop(first, ptr, env, *fargs)
    return envelope_cholesky_vec(first, ptr, env, *fargs, col_rows)


def run_forward(first, ptr, L, r, fargs, col_rows):
    if HAVE_NUMBA:
        return forward_loop(first, ptr, L, r, *fargs)
    return forward_vec(first, ptr, L, r, *fargs, col_rows)


def run_backward(first, ptr, L, y, fargs):
    if HAVE_NUMBA:
        return backward_loop(first, ptr, L, y, *fargs)
    return backward_vec(first, ptr, L, y, *fargs)


def run_minres(indptr, indices, data, b, tol, max_iter):
    if HAVE_NUMBA:
        return minres_loop(indptr, indices, data, b, tol, max_iter)
    return minres_vec(indptr, indices, data, b, tol, max_iter)
