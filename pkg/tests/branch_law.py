"""Output law of the held-token backtracking sampler, by enumerating its random branches.

Written independently of the package decoder: it recomputes Q from scratch
after every expansion and follows each categorical draw and each
keep/replace outcome with its probability.  Only usable on tiny instances.
"""

from collections import defaultdict

import numpy as np


def held_token_law(model, constrainer, eos, min_prob=1e-14):
    out = defaultdict(float)
    size = model.vocab.size
    rows = {}

    def row(x):
        if x not in rows:
            rows[x] = model.next_distribution(x)
        return rows[x]

    def weights(q, x):
        r = row(x)
        return np.array([r[t] * q.get(x + (t,), 1.0 if constrainer.check(x + (t,)) else 0.0)
                         for t in range(size)])

    def step(n_map, q, p):
        if p < min_prob:
            return
        s = ()
        while s in n_map:
            s = s + (n_map[s],)
        if s and s[-1] == eos:
            out[s] += p
            return
        q = dict(q)
        for t in range(size):
            q.setdefault(s + (t,), 1.0 if constrainer.check(s + (t,)) else 0.0)
        w = weights(q, s)
        q_new = dict(q)
        q_new[s] = float(w.sum())
        for j in range(len(s) - 1, -1, -1):
            q_new[s[:j]] = float(weights(q_new, s[:j]).sum())

        def revise(j, held, p2):
            if j < 0:
                step(held, q_new, p2)
                return
            x = s[:j]
            n = held[x]
            old, new = weights(q, x), weights(q_new, x)
            ratio = (new[n] / new.sum()) / (old[n] / old.sum())
            if ratio >= 1.0 - 1e-15:
                revise(j - 1, held, p2)
                return
            revise(j - 1, held, p2 * ratio)
            others = new.copy()
            others[n] = 0.0
            for t in np.nonzero(others)[0]:
                swapped = dict(held)
                swapped[x] = int(t)
                revise(j - 1, swapped, p2 * (1 - ratio) * others[t] / others.sum())

        if w.sum() > 0:
            for t in np.nonzero(w)[0]:
                held = dict(n_map)
                held[s] = int(t)
                revise(len(s) - 1, held, p * w[t] / w.sum())
        else:
            revise(len(s) - 1, dict(n_map), p)

    step({}, {(): 1.0}, 1.0)
    return dict(out)
