# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled sparse kernels: up-looking Cholesky, triangular solves, Jacobi sweeps.

Matrices are passed as CSR/CSC index arrays of a symmetric matrix (for which
both layouts coincide).  The factor L is returned in CSC form with the
diagonal entry stored first in every column.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

ctypedef cnp.int64_t idx_t


cdef inline idx_t _ereach(const idx_t[::1] Ap, const idx_t[::1] Ai, idx_t k,
                          const idx_t[::1] parent, idx_t[::1] s, idx_t[::1] w, idx_t n) noexcept nogil:
    cdef idx_t top = n, p, i, length
    w[k] = k
    for p in range(Ap[k], Ap[k + 1]):
        i = Ai[p]
        if i > k:
            continue
        length = 0
        while w[i] != k:
            s[length] = i
            length += 1
            w[i] = k
            i = parent[i]
        while length > 0:
            top -= 1
            length -= 1
            s[top] = s[length]
    return top


def etree(const idx_t[::1] Ap, const idx_t[::1] Ai, idx_t n):
    """Elimination tree of a symmetric matrix (upper part used)."""
    parent_arr = np.empty(n, dtype=np.int64)
    ancestor_arr = np.empty(n, dtype=np.int64)
    cdef idx_t[::1] parent = parent_arr
    cdef idx_t[::1] ancestor = ancestor_arr
    cdef idx_t k, p, i, inext
    with nogil:
        for k in range(n):
            parent[k] = -1
            ancestor[k] = -1
            for p in range(Ap[k], Ap[k + 1]):
                i = Ai[p]
                while i != -1 and i < k:
                    inext = ancestor[i]
                    ancestor[i] = k
                    if inext == -1:
                        parent[i] = k
                    i = inext
    return parent_arr


def column_counts(const idx_t[::1] Ap, const idx_t[::1] Ai, const idx_t[::1] parent, idx_t n):
    """Number of nonzeros in every column of L (diagonal included)."""
    counts_arr = np.ones(n, dtype=np.int64)
    s_arr = np.empty(n, dtype=np.int64)
    w_arr = np.full(n, -1, dtype=np.int64)
    cdef idx_t[::1] counts = counts_arr
    cdef idx_t[::1] s = s_arr
    cdef idx_t[::1] w = w_arr
    cdef idx_t k, top
    with nogil:
        for k in range(n):
            top = _ereach(Ap, Ai, k, parent, s, w, n)
            while top < n:
                counts[s[top]] += 1
                top += 1
    return counts_arr


def cholesky(const idx_t[::1] Ap, const idx_t[::1] Ai, const double[::1] Ax,
             const idx_t[::1] parent, const idx_t[::1] Lp_in, idx_t n):
    """Numeric up-looking Cholesky.  Returns ``(Li, Lx)`` or raises ValueError."""
    nnz = Lp_in[n]
    Li_arr = np.empty(nnz, dtype=np.int64)
    Lx_arr = np.empty(nnz, dtype=np.float64)
    c_arr = np.array(Lp_in[:n], dtype=np.int64)
    s_arr = np.empty(n, dtype=np.int64)
    w_arr = np.full(n, -1, dtype=np.int64)
    x_arr = np.zeros(n, dtype=np.float64)
    cdef idx_t[::1] Li = Li_arr
    cdef double[::1] Lx = Lx_arr
    cdef idx_t[::1] c = c_arr
    cdef idx_t[::1] s = s_arr
    cdef idx_t[::1] w = w_arr
    cdef double[::1] x = x_arr
    cdef idx_t k, p, i, top, q
    cdef double d, lki
    cdef idx_t bad = -1
    with nogil:
        for k in range(n):
            top = _ereach(Ap, Ai, k, parent, s, w, n)
            x[k] = 0.0
            for p in range(Ap[k], Ap[k + 1]):
                if Ai[p] <= k:
                    x[Ai[p]] += Ax[p]
            d = x[k]
            x[k] = 0.0
            while top < n:
                i = s[top]
                lki = x[i] / Lx[Lp_in[i]]
                x[i] = 0.0
                for q in range(Lp_in[i] + 1, c[i]):
                    x[Li[q]] -= Lx[q] * lki
                d -= lki * lki
                q = c[i]
                c[i] += 1
                Li[q] = k
                Lx[q] = lki
                top += 1
            if d <= 0.0:
                bad = k
                break
            q = c[k]
            c[k] += 1
            Li[q] = k
            Lx[q] = sqrt(d)
    if bad >= 0:
        raise ValueError(f"matrix is not positive definite (pivot {bad})")
    return Li_arr, Lx_arr


def lsolve(const idx_t[::1] Lp, const idx_t[::1] Li, const double[::1] Lx, double[::1] x):
    """In-place solve ``L x = b``."""
    cdef idx_t n = x.shape[0], j, p
    cdef double xj
    with nogil:
        for j in range(n):
            xj = x[j] / Lx[Lp[j]]
            x[j] = xj
            for p in range(Lp[j] + 1, Lp[j + 1]):
                x[Li[p]] -= Lx[p] * xj


def ltsolve(const idx_t[::1] Lp, const idx_t[::1] Li, const double[::1] Lx, double[::1] x):
    """In-place solve ``L^T x = b``."""
    cdef idx_t n = x.shape[0], j, p
    cdef double acc
    with nogil:
        for j in range(n - 1, -1, -1):
            acc = x[j]
            for p in range(Lp[j] + 1, Lp[j + 1]):
                acc -= Lx[p] * x[Li[p]]
            x[j] = acc / Lx[Lp[j]]


def jacobi(const idx_t[::1] Ap, const idx_t[::1] Aj, const double[::1] Ax,
           const double[::1] dinv, const double[::1] b, double[::1] x,
           double omega, int sweeps):
    """``sweeps`` damped Jacobi iterations ``x += omega D^{-1} (b - A x)`` in place."""
    cdef idx_t n = x.shape[0], i, p
    cdef double acc
    r_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] r = r_arr
    cdef int it
    with nogil:
        for it in range(sweeps):
            for i in range(n):
                acc = b[i]
                for p in range(Ap[i], Ap[i + 1]):
                    acc -= Ax[p] * x[Aj[p]]
                r[i] = acc
            for i in range(n):
                x[i] += omega * dinv[i] * r[i]
