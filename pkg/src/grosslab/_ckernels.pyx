# cython: language_level=3
"""Compiled occupation-basis kernels.

Both routines mirror :mod:`grosslab._pykernels` exactly; the ordering is
graded by total occupation and, within a grade, follows
``itertools.combinations_with_replacement`` over mode labels.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef cnp.int64_t i64


cdef i64[:, :] _binomials(int top):
    cdef i64[:, :] table = np.zeros((top + 1, top + 1), dtype=np.int64)
    cdef int n, k
    for n in range(top + 1):
        table[n, 0] = 1
        for k in range(1, n + 1):
            table[n, k] = table[n - 1, k - 1] + table[n - 1, k]
    return table


def enumerate_states(int n_modes, int nmax):
    """Return the occupation table, shape ``(S, n_modes)``, dtype int16."""
    cdef i64[:, :] binom = _binomials(n_modes + nmax + 1)
    cdef i64 total = binom[n_modes + nmax, nmax]
    out = np.zeros((total, n_modes), dtype=np.int16)
    cdef cnp.int16_t[:, :] occ = out
    cdef i64 row = 1
    cdef int t, r, pos
    cdef int[:] idx = np.zeros(max(nmax, 1), dtype=np.intc)
    for t in range(1, nmax + 1):
        for r in range(t):
            idx[r] = 0
        while True:
            for r in range(t):
                occ[row, idx[r]] += 1
            row += 1
            # next multiset in lexicographic order
            pos = t - 1
            while pos >= 0 and idx[pos] == n_modes - 1:
                pos -= 1
            if pos < 0:
                break
            idx[pos] += 1
            for r in range(pos + 1, t):
                idx[r] = idx[pos]
    return out


cdef inline i64 _rank(cnp.int16_t[:] occ, int bump, int n_modes, i64[:, :] binom,
                      int* work):
    # position of occ + e_bump in the graded ordering
    cdef int t = 0, j, c, r, universe
    cdef i64 rank, prev
    for j in range(n_modes):
        c = occ[j] + (1 if j == bump else 0)
        for r in range(c):
            work[t] = j
            t += 1
    universe = n_modes + t - 1
    rank = binom[n_modes + t - 1, t - 1]
    prev = -1
    for r in range(t):
        c = work[r] + r
        rank += binom[universe - prev - 1, t - r] - binom[universe - c, t - r]
        prev = c
    return rank


def raise_table(cnp.int16_t[:, :] occ, int nmax):
    """``table[s, j]`` is the ordinal of ``occ[s] + e_j``, or -1 above the truncation."""
    cdef Py_ssize_t n_states = occ.shape[0]
    cdef int n_modes = occ.shape[1]
    cdef i64[:, :] binom = _binomials(n_modes + nmax + 1)
    out = np.full((n_states, n_modes), -1, dtype=np.int64)
    cdef i64[:, :] table = out
    cdef int[:] work = np.zeros(nmax + 1, dtype=np.intc)
    cdef Py_ssize_t s
    cdef int j, tot
    for s in range(n_states):
        tot = 0
        for j in range(n_modes):
            tot += occ[s, j]
        if tot >= nmax:
            continue
        for j in range(n_modes):
            table[s, j] = _rank(occ[s], j, n_modes, binom, &work[0])
    return out
