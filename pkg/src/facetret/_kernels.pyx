# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled search kernels; see ``_kernels_py`` for the reference semantics."""
import numpy as np
cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"


cdef inline double _dot(const float[:, ::1] rows, Py_ssize_t r, const double[::1] q) noexcept nogil:
    cdef Py_ssize_t j
    cdef double acc = 0.0
    for j in range(q.shape[0]):
        acc = acc + <double>rows[r, j] * q[j]
    return acc


cdef inline bint _better(double sa, cnp.int64_t oa, double sb, cnp.int64_t ob) noexcept nogil:
    # True when a sorts strictly before b.
    return sa > sb or (sa == sb and oa < ob)


cdef Py_ssize_t _rank_one(const float[:, ::1] rows, const cnp.int64_t[::1] idx,
                          const double[::1] q, Py_ssize_t slot,
                          const cnp.int64_t[::1] order, double[::1] buf) noexcept nogil:
    cdef Py_ssize_t i, m = idx.shape[0], rank = 1
    cdef double st
    cdef cnp.int64_t ot
    for i in range(m):
        buf[i] = _dot(rows, idx[i], q)
    st = buf[slot]
    ot = order[idx[slot]]
    for i in range(m):
        if _better(buf[i], order[idx[i]], st, ot):
            rank += 1
    return rank


def score(const float[:, ::1] rows, idx, q):
    cdef const cnp.int64_t[::1] ix = np.ascontiguousarray(idx, dtype=np.int64)
    cdef const double[::1] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef Py_ssize_t i, m = ix.shape[0]
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(m):
            o[i] = _dot(rows, ix[i], qv)
    return out


def rank_in_pool(const float[:, ::1] rows, idx, q, Py_ssize_t slot, order):
    cdef const cnp.int64_t[::1] ix = np.ascontiguousarray(idx, dtype=np.int64)
    cdef const double[::1] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef const cnp.int64_t[::1] ov = np.ascontiguousarray(order, dtype=np.int64)
    buf = np.empty(ix.shape[0], dtype=np.float64)
    cdef double[::1] b = buf
    cdef Py_ssize_t r
    with nogil:
        r = _rank_one(rows, ix, qv, slot, ov, b)
    return int(r)


def batch_rank(const float[:, ::1] rows, pools, queries, slots, order):
    cdef const cnp.int64_t[:, ::1] pv = np.ascontiguousarray(pools, dtype=np.int64)
    cdef const double[:, ::1] qv = np.ascontiguousarray(queries, dtype=np.float64)
    cdef const cnp.int64_t[::1] sv = np.ascontiguousarray(slots, dtype=np.int64)
    cdef const cnp.int64_t[::1] ov = np.ascontiguousarray(order, dtype=np.int64)
    cdef Py_ssize_t c, n = pv.shape[0]
    out = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] o = out
    bufs = np.empty((n, pv.shape[1]), dtype=np.float64)
    cdef double[:, ::1] b = bufs
    with nogil:
        for c in range(n):
            o[c] = _rank_one(rows, pv[c], qv[c], sv[c], ov, b[c])
    return out


def topk(const float[:, ::1] rows, idx, q, Py_ssize_t k, order):
    cdef const cnp.int64_t[::1] ix = np.ascontiguousarray(idx, dtype=np.int64)
    cdef const double[::1] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef const cnp.int64_t[::1] ov = np.ascontiguousarray(order, dtype=np.int64)
    cdef Py_ssize_t m = ix.shape[0], i, j, filled = 0
    if k > m:
        k = m
    scores = np.empty(m, dtype=np.float64)
    sel = np.empty(k, dtype=np.int64)
    cdef double[::1] s = scores
    cdef cnp.int64_t[::1] out = sel
    cdef double si
    cdef cnp.int64_t oi
    with nogil:
        for i in range(m):
            s[i] = _dot(rows, ix[i], qv)
        # insertion into a sorted buffer of size k
        for i in range(m):
            si = s[i]
            oi = ov[ix[i]]
            if filled == k and not _better(si, oi, s[out[k - 1]], ov[ix[out[k - 1]]]):
                continue
            j = filled if filled < k else k - 1
            while j > 0 and _better(si, oi, s[out[j - 1]], ov[ix[out[j - 1]]]):
                out[j] = out[j - 1]
                j -= 1
            out[j] = i
            if filled < k:
                filled += 1
    return sel, scores[sel]
