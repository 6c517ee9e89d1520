"""Pure-Python reference kernels; same signatures as the compiled ``_kernels``."""

import numpy as np

IMPROVE_EPS = 1e-10


def held_karp(dist):
    """Optimal closed tour over a full distance matrix by subset DP (node 0 fixed)."""
    d = np.asarray(dist, dtype=np.float64).tolist()
    n = len(d)
    if n == 1:
        return 0.0, [0]
    if n == 2:
        return d[0][1] + d[1][0], [0, 1]
    m = n - 1
    full = 1 << m
    inf = float("inf")
    cost = [[inf] * m for _ in range(full)]
    parent = [[-1] * m for _ in range(full)]
    for j in range(m):
        cost[1 << j][j] = d[0][j + 1]
    for mask in range(1, full):
        row = cost[mask]
        for j in range(m):
            cj = row[j]
            if cj == inf or not (mask >> j) & 1:
                continue
            dj = d[j + 1]
            for k in range(m):
                if (mask >> k) & 1:
                    continue
                nm = mask | (1 << k)
                c = cj + dj[k + 1]
                if c < cost[nm][k]:
                    cost[nm][k] = c
                    parent[nm][k] = j
    last = full - 1
    best, end = inf, -1
    for j in range(m):
        c = cost[last][j] + d[j + 1][0]
        if c < best:
            best, end = c, j
    tour = []
    mask, j = last, end
    while j != -1:
        tour.append(j + 1)
        pj = parent[mask][j]
        mask ^= 1 << j
        j = pj
    tour.append(0)
    tour.reverse()
    return best, tour


def nearest_neighbor(dist, start=0):
    d = np.asarray(dist, dtype=np.float64)
    n = len(d)
    seen = [False] * n
    tour = [start]
    seen[start] = True
    cur = start
    for _ in range(n - 1):
        best, nxt = float("inf"), -1
        row = d[cur]
        for j in range(n):
            if not seen[j] and row[j] < best:
                best, nxt = row[j], j
        tour.append(nxt)
        seen[nxt] = True
        cur = nxt
    return tour


def tour_length(dist, tour):
    d = np.asarray(dist, dtype=np.float64)
    t = [int(v) for v in tour]
    n = len(t)
    total = 0.0
    for i in range(n):
        total += float(d[t[i], t[(i + 1) % n]])
    return total


def _two_opt_pass(d, t, cost, trace):
    n = len(t)
    improved = False
    for i in range(n - 2):
        a, b = t[i], t[i + 1]
        j_end = n - 1 if i == 0 else n
        for j in range(i + 2, j_end):
            c, e = t[j], t[(j + 1) % n]
            delta = d[a][c] + d[b][e] - d[a][b] - d[c][e]
            if delta < -IMPROVE_EPS:
                t[i + 1:j + 1] = t[i + 1:j + 1][::-1]
                cost += delta
                trace.append(cost)
                improved = True
                a, b = t[i], t[i + 1]
    return cost, improved


def _or_opt_pass(d, t, cost, trace):
    n = len(t)
    improved = False
    for seg_len in (1, 2, 3):
        if seg_len > n - 2:
            break
        i = 0
        while i + seg_len <= n:
            prev, nxt = t[i - 1], t[(i + seg_len) % n]
            s0, s1 = t[i], t[i + seg_len - 1]
            gain = d[prev][s0] + d[s1][nxt] - d[prev][nxt]
            moved = False
            for j in range(n):
                # edge (t[j], t[j+1]) must avoid the segment and its two boundary edges
                if i - 1 <= j <= i + seg_len - 1 or (i == 0 and j == n - 1):
                    continue
                c, e = t[j], t[(j + 1) % n]
                fwd = d[c][s0] + d[s1][e] - d[c][e]
                rev = d[c][s1] + d[s0][e] - d[c][e]
                ins, reverse = (fwd, False) if fwd <= rev else (rev, True)
                delta = ins - gain
                if delta < -IMPROVE_EPS:
                    seg = t[i:i + seg_len]
                    if reverse:
                        seg = seg[::-1]
                    rest = t[:i] + t[i + seg_len:]
                    pos = rest.index(c) + 1
                    t[:] = rest[:pos] + seg + rest[pos:]
                    cost += delta
                    trace.append(cost)
                    improved = moved = True
                    break
            if not moved:
                i += 1
    return cost, improved


def local_search(dist, tour, max_passes):
    """First-improvement 2-opt + Or-opt passes; returns (tour, cost trace, passes)."""
    d = np.asarray(dist, dtype=np.float64).tolist()
    t = [int(v) for v in tour]
    cost = tour_length(dist, t)
    trace = [cost]
    passes = 0
    if len(t) < 4:
        return t, trace, passes
    while passes < max_passes:
        passes += 1
        cost, imp2 = _two_opt_pass(d, t, cost, trace)
        cost, imp3 = _or_opt_pass(d, t, cost, trace)
        if not (imp2 or imp3):
            break
    return t, trace, passes
