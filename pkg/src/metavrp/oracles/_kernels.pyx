# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the exact and local-search TSP oracles.

Signatures and results match ``_kernels_py`` exactly; the test-suite runs
both backends against each other.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()

cdef double IMPROVE_EPS = 1e-10


def held_karp(dist):
    cdef double[:, ::1] d = np.ascontiguousarray(dist, dtype=np.float64)
    cdef Py_ssize_t n = d.shape[0]
    if n == 1:
        return 0.0, [0]
    if n == 2:
        return d[0, 1] + d[1, 0], [0, 1]
    cdef Py_ssize_t m = n - 1
    cdef Py_ssize_t full = 1 << m
    cost_arr = np.full((full, m), np.inf)
    parent_arr = np.full((full, m), -1, dtype=np.int32)
    cdef double[:, ::1] cost = cost_arr
    cdef int[:, ::1] parent = parent_arr
    cdef Py_ssize_t mask, j, k, nm
    cdef double cj, c
    for j in range(m):
        cost[1 << j, j] = d[0, j + 1]
    for mask in range(1, full):
        for j in range(m):
            cj = cost[mask, j]
            if cj == INFINITY or not ((mask >> j) & 1):
                continue
            for k in range(m):
                if (mask >> k) & 1:
                    continue
                nm = mask | (1 << k)
                c = cj + d[j + 1, k + 1]
                if c < cost[nm, k]:
                    cost[nm, k] = c
                    parent[nm, k] = <int>j
    cdef Py_ssize_t last = full - 1
    cdef double best = INFINITY
    cdef Py_ssize_t end = -1
    for j in range(m):
        c = cost[last, j] + d[j + 1, 0]
        if c < best:
            best = c
            end = j
    tour = []
    mask = last
    j = end
    cdef Py_ssize_t pj
    while j != -1:
        tour.append(j + 1)
        pj = parent[mask, j]
        mask ^= 1 << j
        j = pj
    tour.append(0)
    tour.reverse()
    return best, tour


def nearest_neighbor(dist, Py_ssize_t start=0):
    cdef double[:, ::1] d = np.ascontiguousarray(dist, dtype=np.float64)
    cdef Py_ssize_t n = d.shape[0]
    seen_arr = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] seen = seen_arr
    cdef Py_ssize_t cur = start, nxt, j, step
    cdef double best
    tour = [start]
    seen[start] = 1
    for step in range(n - 1):
        best = INFINITY
        nxt = -1
        for j in range(n):
            if not seen[j] and d[cur, j] < best:
                best = d[cur, j]
                nxt = j
        tour.append(nxt)
        seen[nxt] = 1
        cur = nxt
    return tour


def tour_length(dist, tour):
    cdef double[:, ::1] d = np.ascontiguousarray(dist, dtype=np.float64)
    cdef long[::1] t = np.ascontiguousarray(tour, dtype=np.int64)
    cdef Py_ssize_t n = t.shape[0], i
    cdef double total = 0.0
    for i in range(n):
        total += d[t[i], t[(i + 1) % n]]
    return total


cdef inline void _reverse(long[::1] t, Py_ssize_t lo, Py_ssize_t hi):
    cdef long tmp
    while lo < hi:
        tmp = t[lo]
        t[lo] = t[hi]
        t[hi] = tmp
        lo += 1
        hi -= 1


cdef bint _two_opt_pass(double[:, ::1] d, long[::1] t, double* cost, list trace):
    cdef Py_ssize_t n = t.shape[0], i, j, j_end
    cdef long a, b, c, e
    cdef double delta
    cdef bint improved = False
    for i in range(n - 2):
        a = t[i]
        b = t[i + 1]
        j_end = n - 1 if i == 0 else n
        for j in range(i + 2, j_end):
            c = t[j]
            e = t[(j + 1) % n]
            delta = d[a, c] + d[b, e] - d[a, b] - d[c, e]
            if delta < -IMPROVE_EPS:
                _reverse(t, i + 1, j)
                cost[0] += delta
                trace.append(cost[0])
                improved = True
                a = t[i]
                b = t[i + 1]
    return improved


cdef void _move_segment(long[::1] t, long[::1] buf, Py_ssize_t i, Py_ssize_t seg_len,
                        long c, bint reverse):
    cdef Py_ssize_t n = t.shape[0], r = 0, k, w = 0
    cdef Py_ssize_t pos = -1
    # buf <- tour with the segment removed
    for k in range(n):
        if i <= k < i + seg_len:
            continue
        buf[r] = t[k]
        if t[k] == c:
            pos = r
        r += 1
    seg = [t[i + k] for k in range(seg_len)]
    if reverse:
        seg.reverse()
    for k in range(pos + 1):
        t[w] = buf[k]
        w += 1
    for k in range(seg_len):
        t[w] = seg[k]
        w += 1
    for k in range(pos + 1, r):
        t[w] = buf[k]
        w += 1


cdef bint _or_opt_pass(double[:, ::1] d, long[::1] t, long[::1] buf, double* cost, list trace):
    cdef Py_ssize_t n = t.shape[0], seg_len, i, j
    cdef long prev, nxt, s0, s1, c, e
    cdef double gain, fwd, rev, ins, delta
    cdef bint improved = False, moved, reverse
    for seg_len in range(1, 4):
        if seg_len > n - 2:
            break
        i = 0
        while i + seg_len <= n:
            prev = t[(i - 1 + n) % n]
            nxt = t[(i + seg_len) % n]
            s0 = t[i]
            s1 = t[i + seg_len - 1]
            gain = d[prev, s0] + d[s1, nxt] - d[prev, nxt]
            moved = False
            for j in range(n):
                if i - 1 <= j <= i + seg_len - 1 or (i == 0 and j == n - 1):
                    continue
                c = t[j]
                e = t[(j + 1) % n]
                fwd = d[c, s0] + d[s1, e] - d[c, e]
                rev = d[c, s1] + d[s0, e] - d[c, e]
                if fwd <= rev:
                    ins = fwd
                    reverse = False
                else:
                    ins = rev
                    reverse = True
                delta = ins - gain
                if delta < -IMPROVE_EPS:
                    _move_segment(t, buf, i, seg_len, c, reverse)
                    cost[0] += delta
                    trace.append(cost[0])
                    improved = True
                    moved = True
                    break
            if not moved:
                i += 1
    return improved


def local_search(dist, tour, int max_passes):
    cdef double[:, ::1] d = np.ascontiguousarray(dist, dtype=np.float64)
    t_arr = np.array(tour, dtype=np.int64)
    cdef long[::1] t = t_arr
    buf_arr = np.empty_like(t_arr)
    cdef long[::1] buf = buf_arr
    cdef double cost = tour_length(dist, t_arr)
    trace = [cost]
    cdef int passes = 0
    cdef bint imp2, imp3
    if t.shape[0] < 4:
        return [int(v) for v in t_arr], trace, passes
    while passes < max_passes:
        passes += 1
        imp2 = _two_opt_pass(d, t, &cost, trace)
        imp3 = _or_opt_pass(d, t, buf, &cost, trace)
        if not (imp2 or imp3):
            break
    return [int(v) for v in t_arr], trace, passes
