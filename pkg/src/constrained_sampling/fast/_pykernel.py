"""Pure-Python batch kernel over a tabulated :class:`PrefixTree`.

This is the fallback for the compiled ``_ckernel`` and the reference it is
tested against: both consume the same SplitMix64 stream in the same order
and perform the same floating-point operations, so their outputs match
bit for bit.
"""

import numpy as np

BACKTRACK = 0
ASAP = 1
CONSTRAINED = 2

OK = 0
BUDGET = 1
EMPTY = 2
DEAD_END = 3

MASK64 = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed):
        self.state = seed & MASK64

    def next(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def uniform(self):
        return (self.next() >> 11) * (1.0 / 9007199254740992.0)


def _pick(lo, hi, edge_node, edge_prob, q, greedy, rng):
    """Index of the chosen edge in [lo, hi) with weights prob * Q[child]; -1 if all zero."""
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
    target = rng.uniform() * total
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


def run_batch(child_start, edge_node, edge_prob, invalid_mass, complete, n_samples, seed,
              strategy, greedy, max_backtrack, share_q, skip_rejection, fused, max_calls):
    """Draw ``n_samples`` sequences; returns (status, leaves, calls, backtracks, diag).

    ``max_backtrack <= 0`` means unbounded.  ``diag`` is the offending sample
    index when ``status`` is not OK.
    """
    m = len(complete)
    child_start = child_start.tolist()
    edge_node = edge_node.tolist()
    edge_prob = edge_prob.tolist()
    invalid_mass = invalid_mass.tolist()
    complete = complete.tolist()

    q = [1.0] * m
    old = [False] * m
    held = [-1] * m
    # model calls are counted once per node per sample, as the lazy decoder caches rows
    stamp = [-1] * m
    ones = [1.0] * m
    touched = []
    held_set = []
    leaves = np.zeros(n_samples, dtype=np.int64)
    calls_out = np.zeros(n_samples, dtype=np.int64)
    bt_out = np.zeros(n_samples, dtype=np.int64)
    rng = SplitMix64(seed)
    keep_q = share_q or strategy == ASAP

    path_node = []
    path_edge = []
    before = []
    after = []

    for i in range(n_samples):
        if not keep_q:
            for k in touched:
                q[k] = 1.0
                old[k] = False
            touched = []
        for k in held_set:
            held[k] = -1
        held_set = []
        calls = 0
        backtracks = 0

        if strategy != BACKTRACK:
            k = 0
            path_node = [0]
            path_edge = []
            while not complete[k]:
                if stamp[k] != i:
                    if calls >= max_calls:
                        return BUDGET, leaves, calls_out, bt_out, i
                    calls += 1
                    stamp[k] = i
                lo = child_start[k]
                hi = child_start[k + 1]
                if strategy == ASAP and not old[k]:
                    old[k] = True
                    touched.append(k)
                    d = invalid_mass[k]
                    if d > 0.0:
                        q[k] = max(q[k] - d, 0.0)
                        for j in range(len(path_edge) - 1, -1, -1):
                            d = edge_prob[path_edge[j]] * d
                            x = path_node[j]
                            q[x] = max(q[x] - d, 0.0)
                        if not q[0] > 0.0:
                            return EMPTY, leaves, calls_out, bt_out, i
                if strategy == CONSTRAINED:
                    e = _pick(lo, hi, edge_node, edge_prob, ones, greedy, rng)
                else:
                    e = _pick(lo, hi, edge_node, edge_prob, q, greedy, rng)
                if e < 0:
                    if strategy == ASAP:
                        # Q now knows this prefix is dead; start over
                        k = 0
                        path_node = [0]
                        path_edge = []
                        continue
                    return DEAD_END, leaves, calls_out, bt_out, i
                path_edge.append(e)
                k = edge_node[e]
                path_node.append(k)
            leaves[i] = k
            calls_out[i] = calls
            continue

        while True:
            # collect the sequence spelled by the held tokens
            k = 0
            path_node = [0]
            path_edge = []
            while held[k] >= 0:
                e = held[k]
                path_edge.append(e)
                k = edge_node[e]
                path_node.append(k)
            if complete[k]:
                break
            if stamp[k] != i:
                if calls >= max_calls:
                    return BUDGET, leaves, calls_out, bt_out, i
                calls += 1
                stamp[k] = i
            if old[k]:
                d = 0.0
            else:
                old[k] = True
                touched.append(k)
                d = invalid_mass[k]
            lo = child_start[k]
            hi = child_start[k + 1]
            e = _pick(lo, hi, edge_node, edge_prob, q, greedy, rng)
            if e >= 0:
                if held[k] < 0:
                    held_set.append(k)
                held[k] = e
            if not d > 0.0:
                if e < 0:
                    return DEAD_END, leaves, calls_out, bt_out, i
                continue
            depth = len(path_edge)
            before = [q[x] for x in path_node]
            after = list(before)
            q[k] = max(q[k] - d, 0.0)
            after[depth] = q[k]
            for j in range(depth - 1, -1, -1):
                d = edge_prob[path_edge[j]] * d
                x = path_node[j]
                q[x] = max(q[x] - d, 0.0)
                after[j] = q[x]
            if not after[0] > 0.0:
                return EMPTY, leaves, calls_out, bt_out, i
            if skip_rejection:
                continue
            lowest = 0 if max_backtrack <= 0 else max(0, depth - max_backtrack)
            for j in range(depth - 1, lowest - 1, -1):
                if after[j + 1] == before[j + 1] or not after[j] > 0.0:
                    continue
                x = path_node[j]
                cur = path_edge[j]
                lo = child_start[x]
                hi = child_start[x + 1]
                if greedy:
                    best = _pick(lo, hi, edge_node, edge_prob, q, True, rng)
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
                    target = rng.uniform()
                    acc = 0.0
                    new = cur
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
                    else:
                        new = last
                else:
                    if rng.uniform() < ratio:
                        new = cur
                    else:
                        target = rng.uniform() * rest
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
        leaves[i] = k
        calls_out[i] = calls
        bt_out[i] = backtracks
    return OK, leaves, calls_out, bt_out, -1
