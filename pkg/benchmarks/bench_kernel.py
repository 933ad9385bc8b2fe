"""Compare the compiled and pure-Python batch kernels on the same trees.

    python3 benchmarks/bench_kernel.py [--samples N] [--repeat R]

Both backends are run on identical inputs and seeds; the script checks the
outputs are identical and prints samples per second for each.
"""

import argparse
import time

import numpy as np

from constrained_sampling.bench import gen_binary_bench, gen_heavy_prefix_instance, random_instance
from constrained_sampling.fast import BACKENDS, PrefixTree, sample_batch


def cases():
    b = gen_binary_bench()
    yield "binary", PrefixTree.build(b.model, b.constrainer)
    f = gen_heavy_prefix_instance()
    yield "heavy-prefix", PrefixTree.build(f.model, f.constrainer)
    r = random_instance(3, max_vocab=6, max_len=6, max_strings=24)
    yield "random-3", PrefixTree.build(r.model, r.constrainer)


def timed(tree, n, seed, backend, strategy, repeat):
    best = float("inf")
    res = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        res = sample_batch(tree, n, seed, strategy, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, res


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=20_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if "cython" not in BACKENDS:
        raise SystemExit("compiled kernel not built; run `pip install -e . --no-build-isolation`")
    print(f"{'instance':13} {'strategy':11} {'nodes':>6} {'python/s':>12} {'cython/s':>12} {'speedup':>8}")
    for name, tree in cases():
        for strategy in ("backtrack", "asap", "constrained"):
            tp, rp = timed(tree, args.samples, 1, "python", strategy, args.repeat)
            tc, rc = timed(tree, args.samples, 1, "cython", strategy, args.repeat)
            same = np.array_equal(rp.leaves, rc.leaves) and np.array_equal(rp.model_calls, rc.model_calls) \
                and np.array_equal(rp.backtracks, rc.backtracks)
            if not same:
                raise SystemExit(f"{name}/{strategy}: backends disagree")
            print(f"{name:13} {strategy:11} {tree.num_nodes:6d} {args.samples / tp:12.0f} "
                  f"{args.samples / tc:12.0f} {tp / tc:7.1f}x")


if __name__ == "__main__":
    main()
