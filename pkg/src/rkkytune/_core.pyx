# cython: language_level=3
"""Compiled hot loops.

Every function here has a pure-numpy twin in ``_fallback`` with the same
signature; ``_backend`` picks one at import.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()

ctypedef unsigned long long u64


def pair_sum(const double[:, ::1] pocc, const double[:, ::1] pvir,
             const double[::1] eocc, const double[::1] evir,
             double degen_tol, bint exclude):
    """Particle-hole double sum for a batch of point pairs.

    Parameters
    ----------
    pocc : (K, N) array
        Products psi_n(a_k) psi_n(b_k) over occupied states.
    pvir : (K, M) array
        Same products over virtual states.
    eocc, evir : arrays
        Energies of the two groups.
    degen_tol : float
        Pairs with ``evir[m] - eocc[n] < degen_tol`` are degenerate.
    exclude : bool
        Drop degenerate pairs instead of reporting them.

    Returns
    -------
    F : (K,) array
        ``-sum_{n,m} pocc[k,n] pvir[k,m] / (evir[m] - eocc[n])``.
    n_degenerate : int
        Number of degenerate (n, m) pairs found. When ``exclude`` is False
        and this is nonzero, F is not filled.
    """
    cdef Py_ssize_t K = pocc.shape[0], N = pocc.shape[1], M = pvir.shape[1]
    cdef Py_ssize_t k, n, m
    cdef double gap, acc
    cdef long n_deg = 0
    w_arr = np.zeros((N, M), dtype=np.float64)
    cdef double[:, ::1] w = w_arr
    for n in range(N):
        for m in range(M):
            gap = evir[m] - eocc[n]
            if gap < degen_tol:
                n_deg += 1
            else:
                w[n, m] = 1.0 / gap
    out = np.zeros(K, dtype=np.float64)
    cdef double[::1] f = out
    if n_deg and not exclude:
        return out, n_deg
    # the contraction over virtual states goes through BLAS; callers pin
    # BLAS to one thread, which fixes the reduction order
    inner_arr = np.asarray(pvir) @ w_arr.T
    cdef double[:, ::1] inner = inner_arr
    for k in range(K):
        acc = 0.0
        for n in range(N):
            acc += pocc[k, n] * inner[k, n]
        f[k] = -acc
    return out, n_deg


cdef inline int popcount(u64 x) nogil:
    cdef int c = 0
    while x:
        x &= x - 1
        c += 1
    return c


def enumerate_states(int L, int n):
    """All L-bit words with n set bits in increasing numeric order."""
    cdef Py_ssize_t dim = 1
    cdef Py_ssize_t i
    for i in range(n):
        dim = dim * (L - i) // (i + 1)
    out = np.empty(dim, dtype=np.uint64)
    cdef u64[::1] s = out
    cdef u64 v, t, w
    if n == 0:
        s[0] = 0
        return out
    v = (<u64>1 << n) - 1
    for i in range(dim):
        s[i] = v
        t = v | (v - 1)
        # Gosper's hack: next word with the same popcount
        w = (t + 1) | (((~t & (t + 1)) - 1) >> (_ctz(v) + 1))
        v = w
    return out


cdef inline int _ctz(u64 x) nogil:
    cdef int c = 0
    while not (x & 1):
        x >>= 1
        c += 1
    return c


def rank_states(const u64[::1] states, const long long[:, ::1] binom):
    """Colexicographic rank of each word (equals its position in the basis)."""
    cdef Py_ssize_t D = states.shape[0], i
    out = np.empty(D, dtype=np.int64)
    cdef long long[::1] r = out
    for i in range(D):
        r[i] = _rank(states[i], binom)
    return out


cdef inline long long _rank(u64 s, const long long[:, ::1] binom) nogil:
    cdef long long r = 0
    cdef int pos = 0, cnt = 0
    while s:
        if s & 1:
            cnt += 1
            r += binom[pos, cnt]
        s >>= 1
        pos += 1
    return r


def diagonal_energies(const u64[::1] states, int L, const double[::1] couplings,
                      bint periodic):
    """sum_s v_s sum_j n_j n_{j+s} for every basis word."""
    cdef Py_ssize_t D = states.shape[0], i
    cdef Py_ssize_t R = couplings.shape[0], s
    cdef u64 mask = (<u64>1 << L) - 1 if L < 64 else <u64>(-1)
    cdef u64 x, shifted
    cdef double e
    out = np.empty(D, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(D):
        x = states[i]
        e = 0.0
        for s in range(1, R + 1):
            if periodic:
                shifted = ((x >> s) | (x << (L - s))) & mask
            else:
                shifted = x >> s
            e += couplings[s - 1] * popcount(x & shifted)
        o[i] = e
    return out


def hopping_entries(const u64[::1] states, int L, bint periodic,
                    const long long[:, ::1] binom):
    """Off-diagonal hopping connectivity.

    Returns ``(rows, cols, kind)`` where entry ``(rows[e], cols[e])`` is the
    matrix element <rows|b^dag_i b_j|cols> for a bond (i, j). ``kind`` is 0
    for interior bonds, 1 when the particle crosses the boundary bond from
    site 0 to site L-1 and 2 for the reverse crossing.
    """
    cdef Py_ssize_t D = states.shape[0], i, e = 0
    cdef int nb = L if periodic else L - 1
    cdef int j, a, b
    cdef u64 x, y, ba, bb
    cap = D * nb
    rows_a = np.empty(cap, dtype=np.int64)
    cols_a = np.empty(cap, dtype=np.int64)
    kind_a = np.empty(cap, dtype=np.int8)
    cdef long long[::1] rows = rows_a
    cdef long long[::1] cols = cols_a
    cdef signed char[::1] kind = kind_a
    for i in range(D):
        x = states[i]
        for j in range(nb):
            a = j
            b = j + 1 if j + 1 < L else 0
            ba = (x >> a) & 1
            bb = (x >> b) & 1
            if ba == bb:
                continue
            y = x ^ (<u64>1 << a) ^ (<u64>1 << b)
            rows[e] = _rank(y, binom)
            cols[e] = i
            if j == L - 1:
                # boundary bond joins site L-1 (a) and site 0 (b)
                kind[e] = 1 if bb else 2
            else:
                kind[e] = 0
            e += 1
    return rows_a[:e].copy(), cols_a[:e].copy(), kind_a[:e].copy()
