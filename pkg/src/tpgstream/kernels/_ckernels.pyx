# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: GIL-free busy-wait and array graph passes."""

import numpy as np
cimport numpy as cnp

cdef extern from "<time.h>" nogil:
    ctypedef long time_t
    cdef struct timespec:
        time_t tv_sec
        long tv_nsec
    int clock_gettime(int clk_id, timespec *tp)
    int CLOCK_MONOTONIC

BACKEND = "cython"

cnp.import_array()


cdef inline double _now() noexcept nogil:
    cdef timespec ts
    clock_gettime(CLOCK_MONOTONIC, &ts)
    return ts.tv_sec + ts.tv_nsec * 1e-9


def spin_us(double us):
    """Busy-wait for ``us`` microseconds without holding the GIL."""
    cdef double end
    if us <= 0:
        return
    with nogil:
        end = _now() + us * 1e-6
        while _now() < end:
            pass


def dag_ranks(indptr, indices):
    cdef cnp.int64_t[:] ptr = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef cnp.int64_t[:] idx = np.ascontiguousarray(indices, dtype=np.int64)
    cdef Py_ssize_t n = ptr.shape[0] - 1
    cdef Py_ssize_t m = idx.shape[0]
    out = np.zeros(n, dtype=np.int64)
    cdef cnp.int64_t[:] rank = out
    cdef cnp.int64_t[:] indeg = np.zeros(n, dtype=np.int64)
    cdef cnp.int64_t[:] stack = np.empty(n if n > 0 else 1, dtype=np.int64)
    cdef Py_ssize_t top = 0, seen = 0, v, j, d, u
    cdef cnp.int64_t ru
    for j in range(m):
        indeg[idx[j]] += 1
    for v in range(n):
        if indeg[v] == 0:
            stack[top] = v
            top += 1
    while top > 0:
        top -= 1
        u = stack[top]
        seen += 1
        ru = rank[u] + 1
        for j in range(ptr[u], ptr[u + 1]):
            d = idx[j]
            if rank[d] < ru:
                rank[d] = ru
            indeg[d] -= 1
            if indeg[d] == 0:
                stack[top] = d
                top += 1
    if seen != n:
        raise ValueError("graph has a cycle")
    return out


def scc_labels(indptr, indices):
    cdef cnp.int64_t[:] ptr = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef cnp.int64_t[:] idx = np.ascontiguousarray(indices, dtype=np.int64)
    cdef Py_ssize_t n = ptr.shape[0] - 1
    cdef Py_ssize_t sz = n if n > 0 else 1
    cdef cnp.int64_t[:] index = np.full(sz, -1, dtype=np.int64)
    cdef cnp.int64_t[:] low = np.zeros(sz, dtype=np.int64)
    cdef cnp.uint8_t[:] on_stack = np.zeros(sz, dtype=np.uint8)
    out = np.full(n, -1, dtype=np.int64)
    cdef cnp.int64_t[:] label = out
    cdef cnp.int64_t[:] stack = np.empty(sz, dtype=np.int64)
    cdef cnp.int64_t[:] work_v = np.empty(sz, dtype=np.int64)
    cdef cnp.int64_t[:] work_pos = np.empty(sz, dtype=np.int64)
    cdef Py_ssize_t top = 0, wtop = 0, counter = 0, n_comp = 0
    cdef Py_ssize_t root, v, w, pos, p
    for root in range(n):
        if index[root] != -1:
            continue
        index[root] = counter
        low[root] = counter
        counter += 1
        stack[top] = root
        top += 1
        on_stack[root] = 1
        work_v[0] = root
        work_pos[0] = ptr[root]
        wtop = 1
        while wtop > 0:
            v = work_v[wtop - 1]
            pos = work_pos[wtop - 1]
            if pos < ptr[v + 1]:
                work_pos[wtop - 1] = pos + 1
                w = idx[pos]
                if index[w] == -1:
                    index[w] = counter
                    low[w] = counter
                    counter += 1
                    stack[top] = w
                    top += 1
                    on_stack[w] = 1
                    work_v[wtop] = w
                    work_pos[wtop] = ptr[w]
                    wtop += 1
                elif on_stack[w] and index[w] < low[v]:
                    low[v] = index[w]
                continue
            wtop -= 1
            if wtop > 0:
                p = work_v[wtop - 1]
                if low[v] < low[p]:
                    low[p] = low[v]
            if low[v] == index[v]:
                while True:
                    top -= 1
                    w = stack[top]
                    on_stack[w] = 0
                    label[w] = n_comp
                    if w == v:
                        break
                n_comp += 1
    return out
