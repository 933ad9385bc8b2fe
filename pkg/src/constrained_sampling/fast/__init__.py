"""Batch sampling over a tabulated prefix tree.

The compiled kernel is used when it was built; otherwise (or when
``CONSTRAINED_SAMPLING_PURE=1`` is set) the pure-Python kernel is used.
Both produce identical output for the same seed.
"""

from __future__ import annotations

import os
from collections import Counter
from dataclasses import dataclass

import numpy as np

from ..errors import BudgetExceeded, ConfigError, DeadEndError, EmptyLanguageError
from . import _pykernel
from .tree import PrefixTree

try:
    if os.environ.get("CONSTRAINED_SAMPLING_PURE", "") not in ("", "0"):
        raise ImportError("pure-Python kernel forced by environment")
    from . import _ckernel
except ImportError:
    _ckernel = None

BACKENDS = ("python",) if _ckernel is None else ("cython", "python")
DEFAULT_BACKEND = BACKENDS[0]

STRATEGY_CODES = {"backtrack": _pykernel.BACKTRACK, "asap": _pykernel.ASAP,
                  "constrained": _pykernel.CONSTRAINED}


@dataclass
class BatchResult:
    tree: PrefixTree
    leaves: np.ndarray       # node id of each sample's complete sequence
    model_calls: np.ndarray
    backtracks: np.ndarray
    backend: str

    def __len__(self) -> int:
        return len(self.leaves)

    def sequences(self) -> list:
        return [self.tree.prefixes[k] for k in self.leaves.tolist()]

    def counts(self) -> Counter:
        c = Counter(self.leaves.tolist())
        return Counter({self.tree.prefixes[k]: n for k, n in c.items()})

    def empirical(self):
        from ..oracle import EmpiricalDistribution

        emp = EmpiricalDistribution()
        emp.counts = self.counts()
        return emp


def sample_batch(tree: PrefixTree, n: int, seed: int = 0, strategy: str = "backtrack",
                 greedy: bool = False, max_backtrack: int | None = None, share_q: bool = False,
                 skip_rejection: bool = False, fused: bool = True,
                 max_model_calls: int = 1_000_000, backend: str | None = None) -> BatchResult:
    """Draw ``n`` complete sequences from ``tree`` with one of the Q-based strategies."""
    if strategy not in STRATEGY_CODES:
        raise ConfigError(f"batch kernel supports {tuple(STRATEGY_CODES)}, not {strategy!r}")
    if max_backtrack is not None and max_backtrack < 1:
        raise ConfigError("max_backtrack must be a positive integer")
    backend = backend or DEFAULT_BACKEND
    if backend == "cython":
        if _ckernel is None:
            raise ConfigError("compiled kernel is not available")
        kernel = _ckernel
    elif backend == "python":
        kernel = _pykernel
    else:
        raise ConfigError(f"unknown backend {backend!r}")
    status, leaves, calls, bts, diag = kernel.run_batch(
        tree.child_start, tree.edge_node, tree.edge_prob, tree.invalid_mass, tree.complete,
        int(n), int(seed), STRATEGY_CODES[strategy], bool(greedy),
        0 if max_backtrack is None else int(max_backtrack),
        bool(share_q), bool(skip_rejection), bool(fused), int(max_model_calls),
    )
    if status == _pykernel.BUDGET:
        raise BudgetExceeded(f"model-call budget of {max_model_calls} exhausted in sample {diag}",
                             sample_index=diag)
    if status == _pykernel.EMPTY:
        raise EmptyLanguageError("every continuation of the empty prefix is invalid")
    if status == _pykernel.DEAD_END:
        raise DeadEndError(f"dead end in sample {diag}")
    return BatchResult(tree, leaves, calls, bts, backend)


__all__ = ["PrefixTree", "BatchResult", "sample_batch", "BACKENDS", "DEFAULT_BACKEND"]
