"""Compiled inner loops for distances, beam expansion, pruning and NN-Descent.

Kernels work on plain arrays. A graph is an ``(n, cap_r)`` int32 table padded
with -1 plus an int32 degree vector. Every kernel returns the number of
distances it evaluated (or the evaluated ids), and the Python caller charges
its :class:`~gann.core.DistCounter` with them.

Squared distances accumulate in float64 in coordinate order, in one shared
routine, so a distance computed here and one computed through
:func:`gann.core.squared_euclidean` agree bit for bit.
"""

import math

import numba
import numpy as np

RULE_DISTANCE = 0
RULE_ANGLE = 1


@numba.njit(cache=True, nogil=True)
def sq_dist(a, b):
    s = 0.0
    for j in range(a.shape[0]):
        t = np.float64(a[j]) - np.float64(b[j])
        s += t * t
    return s


@numba.njit(cache=True, nogil=True)
def sq_rows(rows, q):
    """Squared distance from every row of ``rows`` to ``q``."""
    out = np.empty(rows.shape[0], dtype=np.float64)
    for i in range(rows.shape[0]):
        out[i] = sq_dist(rows[i], q)
    return out


@numba.njit(cache=True, nogil=True)
def angle_at(ref, a, b):
    """Angle in degrees at ``ref`` between the directions to ``a`` and ``b``; -1 if degenerate."""
    dot = 0.0
    na = 0.0
    nb = 0.0
    for j in range(ref.shape[0]):
        x = np.float64(a[j]) - np.float64(ref[j])
        y = np.float64(b[j]) - np.float64(ref[j])
        dot += x * y
        na += x * x
        nb += y * y
    norm = math.sqrt(na) * math.sqrt(nb)
    if norm == 0.0:
        return -1.0
    c = dot / norm
    if c > 1.0:
        c = 1.0
    elif c < -1.0:
        c = -1.0
    return math.degrees(math.acos(c))


# ------------------------------------------------------------------------ beam


@numba.njit(cache=True, nogil=True)
def beam_expand(ids, deg, data, query, seed_ids, seed_d2, known_ids, known_d2, l):
    """Best-first beam search bounded at ``l``.

    ``seed_ids``/``seed_d2`` are distinct and sorted by (d2, id).
    ``known_ids`` is sorted ascending and maps to already evaluated
    ``known_d2``; every other node met is evaluated here and reported in the
    last two outputs. The pool keeps an expanded flag per slot and the cursor
    always points at or before the nearest unexpanded entry, so expansion
    order equals popping a min-heap of unexpanded pool members.
    """
    n = ids.shape[0]
    seen = np.zeros(n, dtype=np.uint8)
    pool_ids = np.empty(l + 1, dtype=np.int64)
    pool_d2 = np.empty(l + 1, dtype=np.float64)
    done = np.zeros(l + 1, dtype=np.uint8)
    size = 0
    for i in range(seed_ids.shape[0]):
        seen[seed_ids[i]] = 1
        if size < l:
            pool_ids[size] = seed_ids[i]
            pool_d2[size] = seed_d2[i]
            size += 1
    exp_ids = np.empty(n, dtype=np.int64)
    exp_d2 = np.empty(n, dtype=np.float64)
    new_ids = np.empty(n, dtype=np.int64)
    new_d2 = np.empty(n, dtype=np.float64)
    n_exp = 0
    n_new = 0
    n_known = known_ids.shape[0]
    cursor = 0
    while True:
        while cursor < size and done[cursor] == 1:
            cursor += 1
        if cursor >= size:
            break
        done[cursor] = 1
        u = pool_ids[cursor]
        exp_ids[n_exp] = u
        exp_d2[n_exp] = pool_d2[cursor]
        n_exp += 1
        for j in range(deg[u]):
            v = ids[u, j]
            if v < 0 or seen[v] == 1:
                continue
            seen[v] = 1
            k = np.searchsorted(known_ids, v)
            if k < n_known and known_ids[k] == v:
                d = known_d2[k]
            else:
                d = sq_dist(data[v], query)
                new_ids[n_new] = v
                new_d2[n_new] = d
                n_new += 1
            if size == l:
                worst = pool_d2[size - 1]
                if d > worst or (d == worst and v > pool_ids[size - 1]):
                    continue
            pos = size
            while pos > 0 and (
                pool_d2[pos - 1] > d or (pool_d2[pos - 1] == d and pool_ids[pos - 1] > v)
            ):
                pos -= 1
            last = size if size < l else size - 1
            for t in range(last, pos, -1):
                pool_ids[t] = pool_ids[t - 1]
                pool_d2[t] = pool_d2[t - 1]
                done[t] = done[t - 1]
            pool_ids[pos] = v
            pool_d2[pos] = d
            done[pos] = 0
            if size < l:
                size += 1
            if pos < cursor:
                cursor = pos
    return (
        pool_ids[:size].copy(),
        pool_d2[:size].copy(),
        exp_ids[:n_exp].copy(),
        exp_d2[:n_exp].copy(),
        new_ids[:n_new].copy(),
        new_d2[:n_new].copy(),
    )


# --------------------------------------------------------------------- pruning


@numba.njit(cache=True, nogil=True)
def greedy_prune(data, ref, cand_ids, cand_d2, cap_r, rule, scale2, theta_deg):
    """Greedy diversification scan; returns (kept ids, pair checks made).

    A candidate is checked against kept ids in keep order and dropped at the
    first one that triggers the rule. The scan stops at ``cap_r`` kept ids.
    """
    m = cand_ids.shape[0]
    kept = np.empty(min(cap_r, m), dtype=np.int64)
    n_kept = 0
    evals = 0
    for i in range(m):
        if n_kept >= cap_r:
            break
        c = cand_ids[i]
        pruned = False
        for t in range(n_kept):
            w = kept[t]
            evals += 1
            if rule == RULE_DISTANCE:
                if scale2 * sq_dist(data[w], data[c]) <= cand_d2[i]:
                    pruned = True
                    break
            else:
                angle = angle_at(ref, data[w], data[c])
                if angle < 0.0 or angle < theta_deg:
                    pruned = True
                    break
        if not pruned:
            kept[n_kept] = c
            n_kept += 1
    return kept[:n_kept].copy(), evals


# ------------------------------------------------------------------ NN-Descent


@numba.njit(cache=True, nogil=True)
def knn_push(ind, dist, flag, r, node, d):
    """Insert ``node`` into row ``r`` kept sorted by (d2, id); 1 if accepted."""
    k = ind.shape[1]
    if d > dist[r, k - 1] or (d == dist[r, k - 1] and node >= ind[r, k - 1]):
        return 0
    for t in range(k):
        if ind[r, t] == node:
            return 0
    pos = k - 1
    while pos > 0 and (dist[r, pos - 1] > d or (dist[r, pos - 1] == d and ind[r, pos - 1] > node)):
        ind[r, pos] = ind[r, pos - 1]
        dist[r, pos] = dist[r, pos - 1]
        flag[r, pos] = flag[r, pos - 1]
        pos -= 1
    ind[r, pos] = node
    dist[r, pos] = d
    flag[r, pos] = 1
    return 1


@numba.njit(cache=True, nogil=True)
def _reverse(ind, mask):
    """CSR of reverse edges u -> v for every masked slot, sources ascending."""
    n, k = ind.shape
    counts = np.zeros(n + 1, dtype=np.int64)
    for u in range(n):
        for t in range(k):
            if mask[u, t] == 1:
                counts[ind[u, t] + 1] += 1
    indptr = np.cumsum(counts)
    fill = indptr[:-1].copy()
    out = np.empty(indptr[n], dtype=np.int64)
    for u in range(n):
        for t in range(k):
            if mask[u, t] == 1:
                v = ind[u, t]
                out[fill[v]] = u
                fill[v] += 1
    return indptr, out


@numba.njit(cache=True, nogil=True)
def local_join(data, ind, dist, flag):
    """One NN-Descent round over forward and reverse neighbors, in place.

    Lists entering the round are split by their new flag, which is then
    cleared. For every node u, the new members of u's joint neighborhood are
    compared pairwise and against the old members; each comparison offers
    both endpoints to each other's list. Returns (accepted updates, distances
    evaluated).
    """
    n, k = ind.shape
    start = ind.copy()
    fresh_mask = flag.copy()
    stale_mask = np.ones_like(flag) - fresh_mask
    flag[:, :] = 0
    new_ptr, new_rev = _reverse(start, fresh_mask)
    old_ptr, old_rev = _reverse(start, stale_mask)
    widest_new = 0
    widest_old = 0
    for u in range(n):
        widest_new = max(widest_new, new_ptr[u + 1] - new_ptr[u])
        widest_old = max(widest_old, old_ptr[u + 1] - old_ptr[u])
    fresh = np.empty(k + widest_new, dtype=np.int64)
    stale = np.empty(k + widest_old, dtype=np.int64)
    in_fresh = np.full(n, -1, dtype=np.int64)
    in_stale = np.full(n, -1, dtype=np.int64)
    accepted = 0
    evals = 0
    for u in range(n):
        nf = 0
        for t in range(k):
            v = start[u, t]
            if fresh_mask[u, t] == 1 and in_fresh[v] != u:
                in_fresh[v] = u
                fresh[nf] = v
                nf += 1
        for p in range(new_ptr[u], new_ptr[u + 1]):
            v = new_rev[p]
            if in_fresh[v] != u:
                in_fresh[v] = u
                fresh[nf] = v
                nf += 1
        ns = 0
        for t in range(k):
            v = start[u, t]
            if stale_mask[u, t] == 1 and in_fresh[v] != u and in_stale[v] != u:
                in_stale[v] = u
                stale[ns] = v
                ns += 1
        for p in range(old_ptr[u], old_ptr[u + 1]):
            v = old_rev[p]
            if in_fresh[v] != u and in_stale[v] != u:
                in_stale[v] = u
                stale[ns] = v
                ns += 1
        for i in range(nf):
            x = fresh[i]
            for j in range(i + 1, nf + ns):
                y = fresh[j] if j < nf else stale[j - nf]
                d = sq_dist(data[x], data[y])
                evals += 1
                accepted += knn_push(ind, dist, flag, x, y, d)
                accepted += knn_push(ind, dist, flag, y, x, d)
    return accepted, evals
