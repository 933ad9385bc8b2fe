# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled batch kernel; a line-for-line mirror of ``_pykernel.run_batch``."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, int64_t, uint8_t

cnp.import_array()

cdef enum:
    BACKTRACK = 0
    ASAP = 1
    CONSTRAINED = 2
    OK = 0
    BUDGET = 1
    EMPTY = 2
    DEAD_END = 3


cdef inline uint64_t _next(uint64_t* state) noexcept nogil:
    state[0] += 0x9E3779B97F4A7C15ULL
    cdef uint64_t z = state[0]
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _uniform(uint64_t* state) noexcept nogil:
    return <double>(_next(state) >> 11) * (1.0 / 9007199254740992.0)


cdef inline int64_t _pick(int64_t lo, int64_t hi, const int64_t[:] edge_node,
                          const double[:] edge_prob, double[:] q, bint greedy,
                          uint64_t* rng) noexcept nogil:
    cdef int64_t e, best, last
    cdef double w, best_w, total, target, acc
    if greedy:
        best = -1
        best_w = 0.0
        for e in range(lo, hi):
            w = edge_prob[e] * q[edge_node[e]]
            if w > best_w:
                best_w = w
                best = e
        return best
    total = 0.0
    for e in range(lo, hi):
        total += edge_prob[e] * q[edge_node[e]]
    if not total > 0.0:
        return -1
    target = _uniform(rng) * total
    acc = 0.0
    last = -1
    for e in range(lo, hi):
        w = edge_prob[e] * q[edge_node[e]]
        if w > 0.0:
            acc += w
            last = e
            if target < acc:
                return e
    return last


cdef inline double _floor0(double v) noexcept nogil:
    return v if v > 0.0 else 0.0


def run_batch(child_start_a, edge_node_a, edge_prob_a, invalid_mass_a, complete_a,
              Py_ssize_t n_samples, seed, int strategy, bint greedy, long max_backtrack,
              bint share_q, bint skip_rejection, bint fused, long long max_calls):
    cdef const int64_t[:] child_start = np.ascontiguousarray(child_start_a, dtype=np.int64)
    cdef const int64_t[:] edge_node = np.ascontiguousarray(edge_node_a, dtype=np.int64)
    cdef const double[:] edge_prob = np.ascontiguousarray(edge_prob_a, dtype=np.float64)
    cdef const double[:] invalid_mass = np.ascontiguousarray(invalid_mass_a, dtype=np.float64)
    cdef const uint8_t[:] complete = np.ascontiguousarray(complete_a, dtype=np.uint8)
    cdef Py_ssize_t m = complete.shape[0]

    q_a = np.ones(m, dtype=np.float64)
    ones_a = np.ones(m, dtype=np.float64)
    old_a = np.zeros(m, dtype=np.uint8)
    held_a = np.full(m, -1, dtype=np.int64)
    stamp_a = np.full(m, -1, dtype=np.int64)
    touched_a = np.zeros(m, dtype=np.int64)
    held_set_a = np.zeros(m, dtype=np.int64)
    path_node_a = np.zeros(m + 1, dtype=np.int64)
    path_edge_a = np.zeros(m + 1, dtype=np.int64)
    before_a = np.zeros(m + 1, dtype=np.float64)
    after_a = np.zeros(m + 1, dtype=np.float64)
    leaves_a = np.zeros(n_samples, dtype=np.int64)
    calls_a = np.zeros(n_samples, dtype=np.int64)
    bt_a = np.zeros(n_samples, dtype=np.int64)

    cdef double[:] q = q_a
    cdef double[:] ones = ones_a
    cdef uint8_t[:] old = old_a
    cdef int64_t[:] held = held_a
    cdef int64_t[:] stamp = stamp_a
    cdef int64_t[:] touched = touched_a
    cdef int64_t[:] held_set = held_set_a
    cdef int64_t[:] path_node = path_node_a
    cdef int64_t[:] path_edge = path_edge_a
    cdef double[:] before = before_a
    cdef double[:] after = after_a
    cdef int64_t[:] leaves = leaves_a
    cdef int64_t[:] calls_out = calls_a
    cdef int64_t[:] bt_out = bt_a

    cdef uint64_t rng = <uint64_t>(int(seed) & 0xFFFFFFFFFFFFFFFF)
    cdef bint keep_q = share_q or strategy == ASAP
    cdef Py_ssize_t n_touched = 0, n_held = 0, depth, plen
    cdef Py_ssize_t i, j, idx, lowest
    cdef int64_t k, e, x, cur, lo, hi, f, new, last, best
    cdef long long calls, backtracks
    cdef double d, ratio, rest, scale, target, acc, w
    cdef int status = OK
    cdef Py_ssize_t diag = -1

    with nogil:
        for i in range(n_samples):
            if not keep_q:
                for idx in range(n_touched):
                    q[touched[idx]] = 1.0
                    old[touched[idx]] = 0
                n_touched = 0
            for idx in range(n_held):
                held[held_set[idx]] = -1
            n_held = 0
            calls = 0
            backtracks = 0

            if strategy != BACKTRACK:
                k = 0
                path_node[0] = 0
                plen = 0
                while not complete[k]:
                    if stamp[k] != i:
                        if calls >= max_calls:
                            status = BUDGET
                            break
                        calls += 1
                        stamp[k] = i
                    lo = child_start[k]
                    hi = child_start[k + 1]
                    if strategy == ASAP and not old[k]:
                        old[k] = 1
                        touched[n_touched] = k
                        n_touched += 1
                        d = invalid_mass[k]
                        if d > 0.0:
                            q[k] = _floor0(q[k] - d)
                            for j in range(plen - 1, -1, -1):
                                d = edge_prob[path_edge[j]] * d
                                x = path_node[j]
                                q[x] = _floor0(q[x] - d)
                            if not q[0] > 0.0:
                                status = EMPTY
                                break
                    if strategy == CONSTRAINED:
                        e = _pick(lo, hi, edge_node, edge_prob, ones, greedy, &rng)
                    else:
                        e = _pick(lo, hi, edge_node, edge_prob, q, greedy, &rng)
                    if e < 0:
                        if strategy == ASAP:
                            k = 0
                            plen = 0
                            continue
                        status = DEAD_END
                        break
                    path_edge[plen] = e
                    k = edge_node[e]
                    plen += 1
                    path_node[plen] = k
                if status != OK:
                    diag = i
                    break
                leaves[i] = k
                calls_out[i] = calls
                continue

            while True:
                k = 0
                path_node[0] = 0
                depth = 0
                while held[k] >= 0:
                    e = held[k]
                    path_edge[depth] = e
                    k = edge_node[e]
                    depth += 1
                    path_node[depth] = k
                if complete[k]:
                    break
                if stamp[k] != i:
                    if calls >= max_calls:
                        status = BUDGET
                        break
                    calls += 1
                    stamp[k] = i
                if old[k]:
                    d = 0.0
                else:
                    old[k] = 1
                    touched[n_touched] = k
                    n_touched += 1
                    d = invalid_mass[k]
                lo = child_start[k]
                hi = child_start[k + 1]
                e = _pick(lo, hi, edge_node, edge_prob, q, greedy, &rng)
                if e >= 0:
                    if held[k] < 0:
                        held_set[n_held] = k
                        n_held += 1
                    held[k] = e
                if not d > 0.0:
                    if e < 0:
                        status = DEAD_END
                        break
                    continue
                for j in range(depth + 1):
                    before[j] = q[path_node[j]]
                    after[j] = before[j]
                q[k] = _floor0(q[k] - d)
                after[depth] = q[k]
                for j in range(depth - 1, -1, -1):
                    d = edge_prob[path_edge[j]] * d
                    x = path_node[j]
                    q[x] = _floor0(q[x] - d)
                    after[j] = q[x]
                if not after[0] > 0.0:
                    status = EMPTY
                    break
                if skip_rejection:
                    continue
                if max_backtrack <= 0:
                    lowest = 0
                else:
                    lowest = depth - max_backtrack
                    if lowest < 0:
                        lowest = 0
                for j in range(depth - 1, lowest - 1, -1):
                    if after[j + 1] == before[j + 1] or not after[j] > 0.0:
                        continue
                    x = path_node[j]
                    cur = path_edge[j]
                    lo = child_start[x]
                    hi = child_start[x + 1]
                    if greedy:
                        best = _pick(lo, hi, edge_node, edge_prob, q, True, &rng)
                        if best != cur:
                            held[x] = best
                            backtracks += 1
                        continue
                    ratio = (after[j + 1] / before[j + 1]) * (before[j] / after[j])
                    if ratio >= 1.0:
                        continue
                    rest = 0.0
                    for f in range(lo, hi):
                        if f != cur:
                            rest += edge_prob[f] * q[edge_node[f]]
                    if not rest > 0.0:
                        continue
                    if fused:
                        scale = (1.0 - ratio) / rest
                        target = _uniform(&rng)
                        acc = 0.0
                        new = -1
                        last = cur
                        for f in range(lo, hi):
                            if f == cur:
                                w = ratio
                            else:
                                w = edge_prob[f] * q[edge_node[f]] * scale
                            if w > 0.0:
                                acc += w
                                last = f
                                if target < acc:
                                    new = f
                                    break
                        if new < 0:
                            new = last
                    else:
                        if _uniform(&rng) < ratio:
                            new = cur
                        else:
                            target = _uniform(&rng) * rest
                            acc = 0.0
                            new = -1
                            for f in range(lo, hi):
                                if f == cur:
                                    continue
                                w = edge_prob[f] * q[edge_node[f]]
                                if w > 0.0:
                                    acc += w
                                    new = f
                                    if target < acc:
                                        break
                    if new != cur:
                        held[x] = new
                        backtracks += 1
            if status != OK:
                diag = i
                break
            leaves[i] = k
            calls_out[i] = calls
            bt_out[i] = backtracks
    return status, leaves_a, calls_a, bt_a, diag
