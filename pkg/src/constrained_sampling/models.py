"""Concrete :class:`SequenceModel` backends.

None of these run a neural network; they are small explicit distributions
that make exact enumeration possible.
"""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import Prefix, SequenceModel, Vocabulary, as_distribution
from .errors import DistributionError, VocabularyError

TABLE_FORMAT = "table-model/1"
LOAD_TOL = 1e-6


def _normalized(p: np.ndarray) -> np.ndarray:
    return p / p.sum()


class UniformModel(SequenceModel):
    """Uniform next-token model.

    With ``length=None`` every token, EOS included, has probability ``1/V``.
    With ``length=L`` content tokens are uniform and EOS has probability 0
    before position ``L`` and 1 at position ``L`` (fixed-length strings).
    """

    def __init__(self, vocab: Vocabulary, length: int | None = None, temperature: float = 1.0):
        super().__init__(vocab, temperature)
        self.length = length
        v = vocab.size
        if length is None:
            self._row = np.full(v, 1.0 / v)
        else:
            self._row = np.full(v, 1.0 / (v - 1))
            self._row[vocab.eos_id] = 0.0
            self._final = np.zeros(v)
            self._final[vocab.eos_id] = 1.0

    def _distribution(self, prefix: Prefix) -> np.ndarray:
        if self.length is not None and len(prefix) >= self.length:
            return self._final.copy()
        return self._row.copy()


@dataclass(frozen=True)
class SparseRow:
    """Listed ids carry explicit probabilities; every other id gets ``fill``."""

    ids: tuple[int, ...]
    probs: tuple[float, ...]
    fill: float = 0.0

    def dense(self, vocab_size: int) -> np.ndarray:
        out = np.full(vocab_size, self.fill, dtype=np.float64)
        out[list(self.ids)] = self.probs
        return out


class TableModel(SequenceModel):
    """Explicit conditional table: prefix -> next-token vector.

    Prefixes without a row fall back to ``default`` when one is given, and
    raise :class:`DistributionError` otherwise.
    """

    def __init__(
        self,
        vocab: Vocabulary,
        rows: Mapping[Sequence[int], object],
        default=None,
        temperature: float = 1.0,
    ):
        super().__init__(vocab, temperature)
        self._rows = {}
        for prefix, row in rows.items():
            self._rows[tuple(prefix)] = self._check_row(row, prefix)
        self.default = None if default is None else self._check_row(default, "default")

    def _check_row(self, row, where):
        v = self.vocab.size
        if isinstance(row, SparseRow):
            dense = row.dense(v)
        else:
            dense = np.asarray(row, dtype=np.float64)
        try:
            as_distribution(dense, v, tol=LOAD_TOL)
        except DistributionError as exc:
            raise DistributionError(f"row {where}: {exc}") from None
        if isinstance(row, SparseRow):
            total = dense.sum()
            return SparseRow(row.ids, tuple(p / total for p in row.probs), row.fill / total)
        return _normalized(dense)

    @property
    def rows(self) -> dict:
        return self._rows

    def _dense(self, row) -> np.ndarray:
        if isinstance(row, SparseRow):
            return row.dense(self.vocab.size)
        return row.copy()

    def _distribution(self, prefix: Prefix) -> np.ndarray:
        row = self._rows.get(prefix)
        if row is None:
            if self.default is None:
                raise DistributionError(f"no table row for prefix {prefix}")
            row = self.default
        return self._dense(row)

    # serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        def encode(row):
            if isinstance(row, SparseRow):
                return {
                    "sparse": {str(i): p for i, p in zip(row.ids, row.probs)},
                    "fill": row.fill,
                }
            return {"probs": [float(x) for x in row]}

        out = {
            "format": TABLE_FORMAT,
            "vocabulary": [
                {"id": i, "text": t, "eos": i == self.vocab.eos_id}
                for i, t in enumerate(self.vocab.texts)
            ],
            "temperature": self.temperature,
            "rows": [
                {"prefix": list(prefix), **encode(row)}
                for prefix, row in sorted(self._rows.items(), key=lambda kv: (len(kv[0]), kv[0]))
            ],
        }
        if self.default is not None:
            out["default"] = encode(self.default)
        return out

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def from_dict(cls, data: dict) -> "TableModel":
        if data.get("format", TABLE_FORMAT) != TABLE_FORMAT:
            raise DistributionError(f"unsupported table format {data.get('format')!r}")
        entries = sorted(data["vocabulary"], key=lambda e: e["id"])
        if [e["id"] for e in entries] != list(range(len(entries))):
            raise VocabularyError("vocabulary ids must be dense 0..V-1")
        eos = [e["id"] for e in entries if e.get("eos")]
        if len(eos) != 1:
            raise VocabularyError("exactly one vocabulary entry must carry eos=true")
        vocab = Vocabulary(tuple(e["text"] for e in entries), eos[0])

        def decode(row):
            if "probs" in row:
                return row["probs"]
            if "sparse" in row:
                items = sorted((int(k), float(p)) for k, p in row["sparse"].items())
                return SparseRow(
                    tuple(i for i, _ in items),
                    tuple(p for _, p in items),
                    float(row.get("fill", 0.0)),
                )
            raise DistributionError("row needs 'probs' or 'sparse'")

        rows = {tuple(r["prefix"]): decode(r) for r in data["rows"]}
        default = decode(data["default"]) if "default" in data else None
        return cls(vocab, rows, default=default, temperature=data.get("temperature", 1.0))

    @classmethod
    def load(cls, path) -> "TableModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


class RandomTableModel(SequenceModel):
    """Pseudo-random table: every prefix gets its own Dirichlet row.

    Rows are derived from ``(seed, prefix)`` alone, so the model is a pure
    function of its arguments.  EOS is forced at ``max_len`` content tokens.
    """

    def __init__(
        self,
        vocab: Vocabulary,
        seed: int,
        max_len: int,
        concentration: float = 1.0,
        temperature: float = 1.0,
    ):
        super().__init__(vocab, temperature)
        self.seed = int(seed)
        self.max_len = int(max_len)
        self.concentration = float(concentration)
        self._cache: dict = {}

    def _distribution(self, prefix: Prefix) -> np.ndarray:
        row = self._cache.get(prefix)
        if row is None:
            v = self.vocab.size
            if len(prefix) >= self.max_len:
                row = np.zeros(v)
                row[self.vocab.eos_id] = 1.0
            else:
                rng = np.random.default_rng([self.seed, len(prefix), *prefix])
                row = _normalized(rng.dirichlet(np.full(v, self.concentration)))
            self._cache[prefix] = row
        return row.copy()

    def to_table(self) -> TableModel:
        """Materialize every row up to ``max_len`` (exponential; small vocabularies only)."""
        rows = {}
        content = [t for t in range(self.vocab.size) if t != self.vocab.eos_id]
        frontier = [()]
        while frontier:
            nxt = []
            for prefix in frontier:
                rows[prefix] = self._distribution(prefix)
                if len(prefix) < self.max_len:
                    nxt.extend(prefix + (t,) for t in content)
            frontier = nxt
        return TableModel(self.vocab, rows, temperature=self.temperature)


BOS = -1


class NGramModel(SequenceModel):
    """Add-k smoothed n-gram model; the context is the last ``order - 1`` tokens."""

    def __init__(self, vocab: Vocabulary, order: int, counts: Mapping[tuple, Mapping[int, float]],
                 add_k: float = 1.0, temperature: float = 1.0):
        super().__init__(vocab, temperature)
        if order < 1:
            raise ValueError("order must be >= 1")
        if add_k < 0:
            raise ValueError("add_k must be non-negative")
        self.order = order
        self.add_k = float(add_k)
        self._counts = {tuple(ctx): dict(c) for ctx, c in counts.items()}

    @classmethod
    def fit(cls, vocab: Vocabulary, sequences: Iterable[Sequence[int]], order: int = 2,
            add_k: float = 1.0, temperature: float = 1.0) -> "NGramModel":
        """Count n-grams in EOS-terminated training sequences."""
        counts: dict = defaultdict(Counter)
        for seq in sequences:
            seq = list(seq)
            if not seq or seq[-1] != vocab.eos_id:
                seq.append(vocab.eos_id)
            padded = [BOS] * (order - 1) + seq
            for i in range(order - 1, len(padded)):
                ctx = tuple(padded[i - order + 1:i])
                counts[ctx][padded[i]] += 1
        return cls(vocab, order, counts, add_k=add_k, temperature=temperature)

    def context(self, prefix: Prefix) -> tuple:
        if self.order == 1:
            return ()
        padded = (BOS,) * (self.order - 1) + tuple(prefix)
        return padded[-(self.order - 1):]

    def _distribution(self, prefix: Prefix) -> np.ndarray:
        v = self.vocab.size
        row = np.full(v, self.add_k, dtype=np.float64)
        for tok, c in self._counts.get(self.context(prefix), {}).items():
            row[tok] += c
        total = row.sum()
        if total <= 0:
            # unseen context with add_k == 0
            row = np.full(v, 1.0 / v)
            return row
        return row / total
