# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: brute-force k-NN, row scatter-add, bucket max."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def knn(const double[:, ::1] queries, const double[:, ::1] refs, Py_ssize_t k):
    """Indices of the ``k`` nearest refs per query, ordered by (distance, index)."""
    cdef Py_ssize_t nq = queries.shape[0], nr = refs.shape[0], dim = queries.shape[1]
    cdef Py_ssize_t i, j, c, pos, count
    cdef double d, t
    out = np.empty((nq, k), dtype=np.int64)
    cdef long long[:, ::1] idx = out
    cdef double[::1] best = np.empty(k, dtype=np.float64)
    with nogil:
        for i in range(nq):
            count = 0
            for j in range(nr):
                d = 0.0
                for c in range(dim):
                    t = queries[i, c] - refs[j, c]
                    d = d + t * t
                # later indices lose ties, so only a strictly smaller distance enters a full buffer
                if count == k and d >= best[k - 1]:
                    continue
                pos = count if count < k else k - 1
                while pos > 0 and best[pos - 1] > d:
                    if pos < k:
                        best[pos] = best[pos - 1]
                        idx[i, pos] = idx[i, pos - 1]
                    pos -= 1
                best[pos] = d
                idx[i, pos] = j
                if count < k:
                    count += 1
    return out


def sq_dists(const double[:, ::1] queries, const double[:, ::1] refs):
    cdef Py_ssize_t nq = queries.shape[0], nr = refs.shape[0], dim = queries.shape[1]
    cdef Py_ssize_t i, j, c
    cdef double d, t
    out = np.empty((nq, nr), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(nq):
            for j in range(nr):
                d = 0.0
                for c in range(dim):
                    t = queries[i, c] - refs[j, c]
                    d = d + t * t
                o[i, j] = d
    return out


def scatter_add_rows(src, const long long[::1] index, Py_ssize_t n):
    if src.dtype == np.float32:
        return _scatter_add_f32(src, index, n)
    return _scatter_add_f64(np.ascontiguousarray(src, dtype=np.float64), index, n)


cdef _scatter_add_f64(const double[:, ::1] src, const long long[::1] index, Py_ssize_t n):
    cdef Py_ssize_t m = src.shape[0], ch = src.shape[1], r, c
    cdef long long t
    out = np.zeros((n, ch), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for r in range(m):
            t = index[r]
            for c in range(ch):
                o[t, c] += src[r, c]
    return out


cdef _scatter_add_f32(const float[:, ::1] src, const long long[::1] index, Py_ssize_t n):
    cdef Py_ssize_t m = src.shape[0], ch = src.shape[1], r, c
    cdef long long t
    out = np.zeros((n, ch), dtype=np.float32)
    cdef float[:, ::1] o = out
    with nogil:
        for r in range(m):
            t = index[r]
            for c in range(ch):
                o[t, c] += src[r, c]
    return out


def scatter_max(const double[:, ::1] src, const long long[::1] cells, Py_ssize_t n_cells):
    """Bucketwise max of rows. Returns (values, argmax rows); empty buckets give 0 / -1."""
    cdef Py_ssize_t m = src.shape[0], ch = src.shape[1], r, c
    cdef long long b, a
    vals = np.zeros((n_cells, ch), dtype=np.float64)
    arg = np.full((n_cells, ch), -1, dtype=np.int64)
    cdef double[:, ::1] v = vals
    cdef long long[:, ::1] g = arg
    with nogil:
        for r in range(m):
            b = cells[r]
            for c in range(ch):
                a = g[b, c]
                # strict comparison keeps the lowest row on ties
                if a < 0 or src[r, c] > v[b, c]:
                    v[b, c] = src[r, c]
                    g[b, c] = r
    return vals, arg
