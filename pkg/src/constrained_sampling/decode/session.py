"""Decoder session state: configuration, the Q and N maps, counters and records."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from ..constrainers import AcceptAll
from ..core import Constrainer, Prefix, SequenceModel, is_complete
from ..errors import BudgetExceeded, ConfigError

STRATEGIES = ("unconstrained", "constrained", "asap", "backtrack")

DEFAULT_MAX_MODEL_CALLS = 1_000_000
DEFAULT_MAX_LENGTH = 512


@dataclass(frozen=True)
class DecodeConfig:
    strategy: str = "backtrack"
    seed: int = 0
    greedy: bool = False
    top_p: float = 1.0
    max_backtrack: Optional[int] = None
    share_q: bool = False
    max_model_calls: int = DEFAULT_MAX_MODEL_CALLS
    max_length: int = DEFAULT_MAX_LENGTH
    # one categorical draw for keep/replace; False gives Bernoulli then replacement
    fused_rejection: bool = True
    # recompute Q from scratch after every iteration and compare
    debug_q: bool = False
    trace: bool = False
    # fault injection for regression tests: never revise N on ancestors
    skip_rejection: bool = False

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if not 0.0 < self.top_p <= 1.0:
            raise ConfigError("top_p must be in (0, 1]")
        if self.max_backtrack is not None and self.max_backtrack < 1:
            raise ConfigError("max_backtrack must be a positive integer")
        if self.max_model_calls < 1 or self.max_length < 1:
            raise ConfigError("budgets must be positive")

    def with_(self, **changes) -> "DecodeConfig":
        return replace(self, **changes)


@dataclass
class SampleRecord:
    tokens: Prefix
    text: str
    strategy: str
    seed: int
    index: int
    model_calls: int
    constrainer_calls: int
    backtracks: int
    complete: bool
    exact: bool
    truncated: bool = False
    retries: int = 0


class QMap:
    """Validity estimates ``Q[x]`` keyed by prefix.

    The estimates of the children of an expanded ("old") prefix are stored
    together in one vector indexed by token id: 0 for an invalid child,
    1 for a valid child nobody has expanded yet, and the child's own
    aggregate once it is expanded.  A prefix whose parent was never expanded
    is unknown (``None``); the empty prefix starts at 1.
    """

    def __init__(self):
        self.root = 1.0
        self.children: dict = {}
        self.assumed_invalid: set = set()

    def __len__(self) -> int:
        return len(self.children)

    def is_old(self, prefix: Prefix) -> bool:
        return prefix in self.children

    def get(self, prefix: Prefix) -> Optional[float]:
        if not prefix:
            return self.root
        vec = self.children.get(prefix[:-1])
        if vec is None:
            return None
        return float(vec[prefix[-1]])

    def __getitem__(self, prefix: Prefix) -> float:
        value = self.get(tuple(prefix))
        if value is None:
            raise KeyError(prefix)
        return value

    def __contains__(self, prefix) -> bool:
        return self.get(tuple(prefix)) is not None

    def set(self, prefix: Prefix, value: float) -> None:
        if not prefix:
            self.root = value
        else:
            self.children[prefix[:-1]][prefix[-1]] = value

    def child_vector(self, prefix: Prefix) -> np.ndarray:
        return self.children[prefix]

    def snapshot(self) -> dict:
        """Every known entry as a plain dict (used by the debug checks and tests)."""
        out = {(): self.root}
        for parent, vec in self.children.items():
            for t in np.nonzero(vec >= 0)[0]:
                out[parent + (int(t),)] = float(vec[t])
        return out


class DecodeSession:
    """Owns the RNG, Q/N state and counters for one decoding run.

    Models and constrainers are shared read-only; everything mutable lives
    here.  The RNG is numpy's PCG64 seeded with ``config.seed``.
    """

    def __init__(
        self,
        model: SequenceModel,
        constrainer: Constrainer | None = None,
        config: DecodeConfig | None = None,
        **overrides,
    ):
        config = config or DecodeConfig()
        if overrides:
            config = config.with_(**overrides)
        self.config = config
        self.model = model
        self.vocab = model.vocab
        self.constrainer = constrainer if constrainer is not None else AcceptAll(model.vocab)
        if self.constrainer.vocab.size != self.vocab.size:
            raise ConfigError("model and constrainer vocabularies differ")
        self.rng = np.random.Generator(np.random.PCG64(config.seed))
        self.q = QMap()
        self.n: dict = {}
        self.rows: dict = {}
        self.samples_drawn = 0
        self.total_model_calls = 0
        self.total_constrainer_calls = 0
        self.total_backtracks = 0
        self.events: list = []
        self._sample_calls = 0
        self._sample_checks = 0
        self._sample_backtracks = 0
        self._q_history: dict = {}
        # rows of every old prefix, kept across samples in debug mode
        self._debug_rows: dict = {}

    def sample(self) -> "SampleRecord":
        """Draw one sample with the configured strategy."""
        from .strategies import run

        return run(self)

    # per-sample bookkeeping ------------------------------------------------

    def begin_sample(self, reset_q: bool) -> None:
        if reset_q:
            self.q = QMap()
            self._q_history = {}
            self._debug_rows = {}
        self.n = {}
        self.rows = {}
        self._sample_calls = 0
        self._sample_checks = 0
        self._sample_backtracks = 0

    def finish_sample(self, tokens: Prefix, exact: bool, truncated: bool = False, retries: int = 0) -> SampleRecord:
        rec = SampleRecord(
            tokens=tuple(tokens),
            text=self.vocab.render(tokens),
            strategy=self.config.strategy,
            seed=self.config.seed,
            index=self.samples_drawn,
            model_calls=self._sample_calls,
            constrainer_calls=self._sample_checks,
            backtracks=self._sample_backtracks,
            complete=is_complete(tokens, self.vocab.eos_id),
            exact=exact,
            truncated=truncated,
            retries=retries,
        )
        self.samples_drawn += 1
        return rec

    def model_row(self, prefix: Prefix) -> np.ndarray:
        """Next-token distribution, calling the model at most once per prefix per sample."""
        row = self.rows.get(prefix)
        if row is None:
            if self._sample_calls >= self.config.max_model_calls:
                raise BudgetExceeded(
                    f"model-call budget of {self.config.max_model_calls} exhausted",
                    q_root=self.q.root,
                    deepest_prefix=max(self.rows, key=len, default=()),
                    model_calls=self._sample_calls,
                )
            row = self.model.next_distribution(prefix)
            self.rows[prefix] = row
            self._sample_calls += 1
            self.total_model_calls += 1
        return row

    def count_checks(self, n: int) -> None:
        self._sample_checks += n
        self.total_constrainer_calls += n

    def count_backtrack(self) -> None:
        self._sample_backtracks += 1
        self.total_backtracks += 1

    def uniform(self) -> float:
        return float(self.rng.random())

    def log(self, *event) -> None:
        if self.config.trace:
            self.events.append(event)

    # debug checks ------------------------------------------------------------

    def recompute_q(self) -> dict:
        """Q for every old prefix, recomputed from the stored rows and leaf verdicts."""
        q = self.q
        memo: dict = {}

        def value(prefix):
            if prefix in memo:
                return memo[prefix]
            if not q.is_old(prefix):
                v = q.get(prefix)
            else:
                row = self._debug_rows[prefix]
                vec = q.child_vector(prefix)
                total = 0.0
                for t in np.nonzero(row > 0)[0]:
                    child = prefix + (int(t),)
                    total += row[t] * (value(child) if vec[t] > 0 else 0.0)
                v = total
            memo[prefix] = v
            return v

        return {prefix: value(prefix) for prefix in q.children}

    def check_q_invariants(self, tol: float = 1e-9) -> None:
        from ..errors import InvariantViolation

        expected = self.recompute_q()
        for prefix, v in expected.items():
            got = self.q.get(prefix)
            if got is None or abs(got - v) > tol:
                raise InvariantViolation(f"Q{prefix} = {got}, recurrence gives {v}")
        snap = self.q.snapshot()
        for prefix, v in snap.items():
            before = self._q_history.get(prefix)
            if before is not None and v > before + tol:
                raise InvariantViolation(f"Q{prefix} increased from {before} to {v}")
        self._q_history = snap

    def remember_row(self, prefix: Prefix, row: np.ndarray) -> None:
        if self.config.debug_q:
            self._debug_rows[prefix] = row
