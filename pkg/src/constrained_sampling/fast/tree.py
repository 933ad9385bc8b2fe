"""Tabulate the valid prefix tree of a (model, constrainer) pair into flat arrays.

Only valid children with positive probability become nodes.  The mass of
everything else below a node is kept in ``invalid_mass`` so the kernels can
apply the same Q update as the lazy decoder without seeing invalid tokens.
Children of a node are stored contiguously in token-id order (CSR layout).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ..core import Constrainer, Prefix, SequenceModel
from ..errors import InstanceTooLarge

DEFAULT_MAX_NODES = 500_000


@dataclass
class PrefixTree:
    prefixes: list            # node id -> prefix tuple
    complete: np.ndarray      # uint8, node ends with EOS
    child_start: np.ndarray   # int64 [M + 1], edges of node k are child_start[k]:child_start[k+1]
    edge_token: np.ndarray    # int64
    edge_node: np.ndarray     # int64
    edge_prob: np.ndarray     # float64, P(token | parent)
    invalid_mass: np.ndarray  # float64, P(invalid next token | node)
    _index: dict | None = field(default=None, repr=False)

    @property
    def num_nodes(self) -> int:
        return len(self.prefixes)

    @property
    def leaves(self) -> np.ndarray:
        return np.nonzero(self.complete)[0]

    def node_of(self, prefix: Prefix) -> int:
        if self._index is None:
            self._index = {p: i for i, p in enumerate(self.prefixes)}
        return self._index[tuple(prefix)]

    @classmethod
    def build(cls, model: SequenceModel, constrainer: Constrainer,
              max_nodes: int = DEFAULT_MAX_NODES) -> "PrefixTree":
        eos = model.vocab.eos_id
        prefixes: list = [()]
        complete = [0]
        children: list = []
        invalid = []
        queue = deque([0])
        # BFS ids; children of node k are appended when k is expanded
        expanded: dict = {}
        while queue:
            k = queue.popleft()
            prefix = prefixes[k]
            if complete[k]:
                expanded[k] = ([], 0.0)
                continue
            row = model.next_distribution(prefix)
            mask = constrainer.valid_mask(prefix)
            edges = []
            for t in np.nonzero(mask & (row > 0))[0]:
                t = int(t)
                child = len(prefixes)
                if child >= max_nodes:
                    raise InstanceTooLarge(f"valid prefix tree exceeds {max_nodes} nodes")
                prefixes.append(prefix + (t,))
                complete.append(1 if t == eos else 0)
                edges.append((t, child, float(row[t])))
                queue.append(child)
            expanded[k] = (edges, float(row[~mask].sum()))

        m = len(prefixes)
        child_start = np.zeros(m + 1, dtype=np.int64)
        tokens, nodes, probs = [], [], []
        invalid_mass = np.zeros(m, dtype=np.float64)
        for k in range(m):
            edges, inv = expanded[k]
            child_start[k + 1] = child_start[k] + len(edges)
            for t, child, p in edges:
                tokens.append(t)
                nodes.append(child)
                probs.append(p)
            invalid_mass[k] = inv
        return cls(
            prefixes=prefixes,
            complete=np.array(complete, dtype=np.uint8),
            child_start=child_start,
            edge_token=np.array(tokens, dtype=np.int64),
            edge_node=np.array(nodes, dtype=np.int64),
            edge_prob=np.array(probs, dtype=np.float64),
            invalid_mass=invalid_mass,
        )
