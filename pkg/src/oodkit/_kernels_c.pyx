# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled k-NN search and Mann-Whitney pair counting."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY

cnp.import_array()


def knn(reference, query, Py_ssize_t k, bint exclude_self=False):
    cdef double[:, ::1] ref = np.ascontiguousarray(reference, dtype=np.float64)
    cdef double[:, ::1] q = np.ascontiguousarray(query, dtype=np.float64)
    cdef Py_ssize_t n_ref = ref.shape[0], n_q = q.shape[0], d = ref.shape[1]
    cdef Py_ssize_t limit = n_ref - 1 if exclude_self else n_ref
    if k < 1 or k > limit:
        raise ValueError(f"k={k} must lie in [1, {limit}]")
    if q.shape[1] != d:
        raise ValueError("query and reference widths differ")
    out_d = np.empty((n_q, k), dtype=np.float64)
    out_i = np.empty((n_q, k), dtype=np.int64)
    cdef double[:, ::1] od = out_d
    cdef cnp.int64_t[:, ::1] oi = out_i
    cdef Py_ssize_t i, j, c, p
    cdef double acc, diff, worst
    with nogil:
        for i in range(n_q):
            for p in range(k):
                od[i, p] = INFINITY
                oi[i, p] = -1
            worst = INFINITY
            for j in range(n_ref):
                if exclude_self and j == i:
                    continue
                acc = 0.0
                for c in range(d):
                    diff = q[i, c] - ref[j, c]
                    acc = acc + diff * diff
                    if acc > worst:
                        break
                if acc < worst:
                    p = k - 1
                    while p > 0 and od[i, p - 1] > acc:
                        od[i, p] = od[i, p - 1]
                        oi[i, p] = oi[i, p - 1]
                        p -= 1
                    od[i, p] = acc
                    oi[i, p] = j
                    worst = od[i, k - 1]
            for p in range(k):
                od[i, p] = sqrt(od[i, p])
    return out_d, out_i


def pair_counts(in_scores, ood_scores):
    cdef double[::1] s = np.sort(np.asarray(in_scores, dtype=np.float64))
    cdef double[::1] o = np.sort(np.asarray(ood_scores, dtype=np.float64))
    cdef Py_ssize_t n = s.shape[0], m = o.shape[0], lo = 0, hi = 0, j
    cdef long long greater = 0, ties = 0
    with nogil:
        for j in range(m):
            while lo < n and s[lo] < o[j]:
                lo += 1
            if hi < lo:
                hi = lo
            while hi < n and s[hi] <= o[j]:
                hi += 1
            greater += lo
            ties += hi - lo
    return int(greater), int(ties)
