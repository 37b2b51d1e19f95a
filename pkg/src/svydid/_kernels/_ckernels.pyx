# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled grouped-sum and demeaning kernels.

Every function here has a numpy twin in ``_pykernels`` with the same
signature and semantics. Inputs are validated by the caller.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()

ctypedef cnp.int64_t idx_t


def group_sum(const double[:, ::1] values, const idx_t[::1] codes, Py_ssize_t n_groups):
    cdef Py_ssize_t n = values.shape[0]
    cdef Py_ssize_t k = values.shape[1]
    cdef Py_ssize_t i, j, g
    out = np.zeros((n_groups, k), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(n):
        g = codes[i]
        for j in range(k):
            o[g, j] += values[i, j]
    return out


def stratified_meat(
    const double[:, ::1] totals,
    const idx_t[::1] psu_stratum,
    const double[::1] factor,
    Py_ssize_t n_strata,
):
    cdef Py_ssize_t p = totals.shape[0]
    cdef Py_ssize_t k = totals.shape[1]
    cdef Py_ssize_t i, a, b, h
    cdef double fa
    means_arr = np.zeros((n_strata, k), dtype=np.float64)
    counts_arr = np.zeros(n_strata, dtype=np.float64)
    per_arr = np.zeros((n_strata, k, k), dtype=np.float64)
    cdef double[:, ::1] means = means_arr
    cdef double[::1] counts = counts_arr
    cdef double[:, :, ::1] per = per_arr
    cdef double[::1] c = np.empty(k, dtype=np.float64)

    for i in range(p):
        h = psu_stratum[i]
        counts[h] += 1.0
        for a in range(k):
            means[h, a] += totals[i, a]
    for h in range(n_strata):
        if counts[h] > 0:
            for a in range(k):
                means[h, a] /= counts[h]
    for i in range(p):
        h = psu_stratum[i]
        for a in range(k):
            c[a] = totals[i, a] - means[h, a]
        for a in range(k):
            fa = factor[h] * c[a]
            for b in range(a, k):
                per[h, a, b] += fa * c[b]
    for h in range(n_strata):
        for a in range(k):
            for b in range(a + 1, k):
                per[h, b, a] = per[h, a, b]
    return per_arr.sum(axis=0), per_arr


cdef void _demean_pass(
    double[:, ::1] x,
    const idx_t[::1] codes,
    const double[::1] w,
    double[:, ::1] sums,
    double[::1] wsum,
) noexcept nogil:
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t k = x.shape[1]
    cdef Py_ssize_t g_n = sums.shape[0]
    cdef Py_ssize_t i, j, g
    for g in range(g_n):
        wsum[g] = 0.0
        for j in range(k):
            sums[g, j] = 0.0
    for i in range(n):
        g = codes[i]
        wsum[g] += w[i]
        for j in range(k):
            sums[g, j] += w[i] * x[i, j]
    for g in range(g_n):
        if wsum[g] > 0.0:
            for j in range(k):
                sums[g, j] /= wsum[g]
    for i in range(n):
        g = codes[i]
        for j in range(k):
            x[i, j] -= sums[g, j]


def demean_one_way(double[:, ::1] x, const idx_t[::1] codes, const double[::1] w, Py_ssize_t n_groups):
    cdef double[:, ::1] sums = np.zeros((n_groups, x.shape[1]), dtype=np.float64)
    cdef double[::1] wsum = np.zeros(n_groups, dtype=np.float64)
    with nogil:
        _demean_pass(x, codes, w, sums, wsum)


def demean_two_way(
    double[:, ::1] x,
    const idx_t[::1] codes1,
    Py_ssize_t n1,
    const idx_t[::1] codes2,
    Py_ssize_t n2,
    const double[::1] w,
    double tol,
    int max_iter,
):
    cdef Py_ssize_t k = x.shape[1]
    cdef double[:, ::1] s1 = np.zeros((n1, k), dtype=np.float64)
    cdef double[::1] w1 = np.zeros(n1, dtype=np.float64)
    cdef double[:, ::1] s2 = np.zeros((n2, k), dtype=np.float64)
    cdef double[::1] w2 = np.zeros(n2, dtype=np.float64)
    cdef int it = 0
    cdef double delta = 0.0
    cdef Py_ssize_t g, j
    with nogil:
        while it < max_iter:
            _demean_pass(x, codes1, w, s1, w1)
            _demean_pass(x, codes2, w, s2, w2)
            it += 1
            # largest second-factor correction; first-factor drift after it is bounded by it
            delta = 0.0
            for g in range(n2):
                for j in range(k):
                    if fabs(s2[g, j]) > delta:
                        delta = fabs(s2[g, j])
            if delta <= tol:
                break
    return it, delta
