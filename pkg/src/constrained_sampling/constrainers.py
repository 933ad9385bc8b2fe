"""Concrete constrainers: accept-all, string-set trie, regex DFA, length cap, conjunction."""

from __future__ import annotations

from pathlib import Path
from typing import Callable, Iterable, Sequence

import interegular
import numpy as np

from .core import Constrainer, Prefix, Vocabulary
from .errors import (
    EmptyLanguageError,
    IngestionError,
    MalformedSequenceError,
    SamplingError,
    VocabularyError,
)


class AcceptAll(Constrainer):
    """Every well-formed sequence is valid."""

    def check(self, prefix) -> bool:
        return True

    def valid_next(self, prefix) -> frozenset:
        return frozenset(range(self.vocab.size))

    def valid_mask(self, prefix) -> np.ndarray:
        return np.ones(self.vocab.size, dtype=bool)


class TrieConstrainer(Constrainer):
    """Valid prefixes are exactly the prefixes of the inserted (EOS-terminated) sequences."""

    def __init__(self, vocab: Vocabulary):
        super().__init__(vocab)
        # node -> {token: child}; the root is node 0
        self._children: list[dict] = [{}]
        self._terminal: list[bool] = [False]
        self.num_sequences = 0

    def insert(self, seq: Sequence[int]) -> bool:
        """Insert one sequence; returns False if it was already present."""
        eos = self.vocab.eos_id
        seq = [int(t) for t in seq]
        if seq and seq[-1] == eos:
            seq = seq[:-1]
        if not seq:
            raise MalformedSequenceError("cannot insert an empty sequence")
        node = 0
        for t in seq:
            if t == eos or not 0 <= t < self.vocab.size:
                raise MalformedSequenceError(f"bad token {t} in trie sequence")
            nxt = self._children[node].get(t)
            if nxt is None:
                nxt = len(self._children)
                self._children[node][t] = nxt
                self._children.append({})
                self._terminal.append(False)
            node = nxt
        if self._terminal[node]:
            return False
        self._terminal[node] = True
        self.num_sequences += 1
        return True

    @property
    def num_nodes(self) -> int:
        return len(self._children)

    def _walk(self, prefix) -> tuple[int, bool]:
        """Returns (node, ended) with node -1 when the prefix falls off the trie."""
        eos = self.vocab.eos_id
        node = 0
        n = len(prefix)
        for i, t in enumerate(prefix):
            if t == eos:
                if i != n - 1 or not self._terminal[node]:
                    return -1, False
                return node, True
            node = self._children[node].get(t, -1)
            if node < 0:
                return -1, False
        return node, False

    def check(self, prefix) -> bool:
        node, _ = self._walk(prefix)
        return node >= 0

    def valid_next(self, prefix) -> frozenset:
        node, ended = self._walk(prefix)
        if node < 0 or ended:
            return frozenset()
        out = set(self._children[node])
        if self._terminal[node]:
            out.add(self.vocab.eos_id)
        return frozenset(out)

    def sequences(self) -> list[Prefix]:
        """All inserted sequences (without EOS), depth-first in token order."""
        out = []
        stack = [(0, ())]
        while stack:
            node, path = stack.pop()
            if self._terminal[node]:
                out.append(path)
            for t in sorted(self._children[node], reverse=True):
                stack.append((self._children[node][t], path + (t,)))
        return out


def build_trie(sequences: Iterable[Sequence[int]], vocab: Vocabulary) -> TrieConstrainer:
    trie = TrieConstrainer(vocab)
    for seq in sequences:
        trie.insert(seq)
    if trie.num_sequences == 0:
        raise EmptyLanguageError("trie needs at least one sequence")
    return trie


def ingest_api_list(path, tokenizer: Callable[[str], Sequence[int]], vocab: Vocabulary) -> TrieConstrainer:
    """Build a trie from a newline-separated UTF-8 file; ``#`` lines are comments.

    The number of distinct entries is available as ``num_sequences``.
    """
    trie = TrieConstrainer(vocab)
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            ids = tokenizer(line)
            trie.insert(ids)
        except SamplingError as exc:
            raise IngestionError(f"{path}:{lineno}: cannot ingest {line!r}: {exc}") from None
    if trie.num_sequences == 0:
        raise IngestionError(f"{path}: no entries")
    return trie


class DfaConstrainer(Constrainer):
    """Token-level automaton with liveness precomputed at construction.

    ``transitions[state, token]`` is the next state or -1; EOS moves an
    accepting state to the sink :attr:`DONE`.  A prefix is valid iff its
    state is live, i.e. some accepting state is still reachable.
    """

    DONE = -2

    def __init__(self, vocab: Vocabulary, transitions: np.ndarray, initial: int, accepting: Iterable[int]):
        super().__init__(vocab)
        self.transitions = np.asarray(transitions, dtype=np.int64)
        self.initial = int(initial)
        self.accepting = frozenset(int(s) for s in accepting)
        self.live = self._liveness()

    def _liveness(self) -> np.ndarray:
        n_states = self.transitions.shape[0]
        eos = self.vocab.eos_id
        live = np.zeros(n_states, dtype=bool)
        preds: list[set] = [set() for _ in range(n_states)]
        for s in range(n_states):
            for t in range(self.vocab.size):
                nxt = self.transitions[s, t]
                if t != eos and nxt >= 0:
                    preds[nxt].add(s)
        stack = [s for s in self.accepting]
        for s in stack:
            live[s] = True
        while stack:
            s = stack.pop()
            for p in preds[s]:
                if not live[p]:
                    live[p] = True
                    stack.append(p)
        return live

    def state_of(self, prefix) -> int:
        eos = self.vocab.eos_id
        state = self.initial
        n = len(prefix)
        for i, t in enumerate(prefix):
            if t == eos:
                if i != n - 1 or state not in self.accepting:
                    return -1
                return self.DONE
            state = self.transitions[state, t]
            if state < 0 or not self.live[state]:
                return -1
        return int(state)

    def check(self, prefix) -> bool:
        state = self.state_of(prefix)
        return state == self.DONE or (state >= 0 and bool(self.live[state]))

    def valid_next(self, prefix) -> frozenset:
        state = self.state_of(prefix)
        if state < 0:
            return frozenset()
        row = self.transitions[state]
        out = {int(t) for t in np.nonzero(row >= 0)[0] if self.live[row[t]]}
        out.discard(self.vocab.eos_id)
        if state in self.accepting:
            out.add(self.vocab.eos_id)
        return frozenset(out)

    def valid_mask(self, prefix) -> np.ndarray:
        state = self.state_of(prefix)
        if state < 0:
            return np.zeros(self.vocab.size, dtype=bool)
        row = self.transitions[state]
        mask = (row >= 0) & self.live[np.maximum(row, 0)]
        mask[self.vocab.eos_id] = state in self.accepting
        return mask


def build_dfa_from_pattern(pattern: str, vocab: Vocabulary) -> DfaConstrainer:
    """Compile a regular expression over token texts into a token-level automaton.

    The pattern is matched against the concatenated texts of the content
    tokens, so a multi-character token advances the character automaton by
    its whole text.
    """
    try:
        fsm = interegular.parse_pattern(pattern).to_fsm()
    except Exception as exc:  # interegular raises several unrelated types
        raise SamplingError(f"cannot compile pattern {pattern!r}: {exc}") from None

    known_chars = set("".join(t for i, t in enumerate(vocab.texts) if i != vocab.eos_id))
    for symbol in fsm.alphabet:
        if isinstance(symbol, str) and symbol not in known_chars and symbol != "\n":
            raise VocabularyError(f"pattern uses {symbol!r}, which no token text contains")

    def step(state, text):
        for ch in text:
            state = fsm.map.get(state, {}).get(fsm.alphabet[ch])
            if state is None:
                return None
        return state

    eos = vocab.eos_id
    index = {fsm.initial: 0}
    order = [fsm.initial]
    rows = []
    i = 0
    while i < len(order):
        src = order[i]
        row = np.full(vocab.size, -1, dtype=np.int64)
        for t, text in enumerate(vocab.texts):
            if t == eos:
                continue
            dst = step(src, text)
            if dst is None:
                continue
            if dst not in index:
                index[dst] = len(order)
                order.append(dst)
            row[t] = index[dst]
        rows.append(row)
        i += 1
    transitions = np.stack(rows)
    accepting = [index[s] for s in order if s in fsm.finals]
    return DfaConstrainer(vocab, transitions, 0, accepting)


class LengthCap(Constrainer):
    """At most ``max_len`` content tokens before EOS."""

    def __init__(self, vocab: Vocabulary, max_len: int):
        super().__init__(vocab)
        self.max_len = int(max_len)

    def check(self, prefix) -> bool:
        n = len(prefix)
        if n and prefix[-1] == self.vocab.eos_id:
            n -= 1
        return n <= self.max_len

    def valid_next(self, prefix) -> frozenset:
        if len(prefix) >= self.max_len:
            return frozenset({self.vocab.eos_id})
        return frozenset(range(self.vocab.size))


class Conjunction(Constrainer):
    """Valid iff every child says valid.

    Only guarantees that the prefix extends to something *each* child
    accepts, not one common sequence, so exact sampling is not guaranteed
    unless the intersection happens to be completability-sound.
    """

    def __init__(self, vocab: Vocabulary, children: Sequence[Constrainer]):
        super().__init__(vocab)
        if not children:
            raise ValueError("conjunction needs at least one child")
        self.children = tuple(children)

    def check(self, prefix) -> bool:
        return all(c.check(prefix) for c in self.children)

    def valid_next(self, prefix) -> frozenset:
        out = self.children[0].valid_next(prefix)
        for c in self.children[1:]:
            if not out:
                break
            out = out & c.valid_next(prefix)
        return out
