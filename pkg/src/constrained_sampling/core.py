"""Vocabulary, prefix and distribution primitives plus the model/constrainer contracts.

Prefixes are plain ``tuple[int, ...]`` objects so they hash by content and can
key the decoders' associative state directly.  A prefix whose last token is
EOS is *complete*; nothing may follow EOS.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ContractViolation,
    DistributionError,
    MalformedSequenceError,
    VocabularyError,
)

Prefix = tuple  # tuple[int, ...]

EMPTY: Prefix = ()

NORMALIZATION_TOL = 1e-9


@dataclass(frozen=True)
class Vocabulary:
    """Dense token alphabet ``0..V-1`` with one designated EOS id."""

    texts: tuple[str, ...]
    eos_id: int
    _index: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        texts = tuple(self.texts)
        object.__setattr__(self, "texts", texts)
        if not texts:
            raise VocabularyError("vocabulary is empty")
        if any(not isinstance(t, str) or not t for t in texts):
            raise VocabularyError("token texts must be non-empty strings")
        if len(set(texts)) != len(texts):
            raise VocabularyError("token texts must be unique")
        if not 0 <= self.eos_id < len(texts):
            raise VocabularyError(f"eos_id {self.eos_id} is not a token id")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(texts)})

    @classmethod
    def from_texts(cls, texts: Iterable[str], eos: str = "<eos>") -> "Vocabulary":
        """Build a vocabulary from content tokens, appending ``eos`` as the last id."""
        texts = list(texts)
        if eos in texts:
            return cls(tuple(texts), texts.index(eos))
        return cls(tuple(texts) + (eos,), len(texts))

    def __len__(self) -> int:
        return len(self.texts)

    @property
    def size(self) -> int:
        return len(self.texts)

    def id_of(self, text: str) -> int:
        try:
            return self._index[text]
        except KeyError:
            raise VocabularyError(f"unknown token text {text!r}") from None

    def text_of(self, token_id: int) -> str:
        return self.texts[token_id]

    def render(self, prefix: Sequence[int], show_eos: bool = False) -> str:
        return "".join(
            self.texts[t] for t in prefix if show_eos or t != self.eos_id
        )

    def tokenize(self, text: str, add_eos: bool = False) -> Prefix:
        """Greedy longest-match tokenization over the content token texts.

        Raises VocabularyError when some position matches no token.
        """
        content = [(t, i) for i, t in enumerate(self.texts) if i != self.eos_id]
        content.sort(key=lambda item: -len(item[0]))
        out = []
        pos = 0
        while pos < len(text):
            for tok_text, tok_id in content:
                if text.startswith(tok_text, pos):
                    out.append(tok_id)
                    pos += len(tok_text)
                    break
            else:
                raise VocabularyError(
                    f"cannot tokenize {text!r} at offset {pos} ({text[pos:pos + 10]!r})"
                )
        if add_eos:
            out.append(self.eos_id)
        return tuple(out)


def is_complete(prefix: Sequence[int], eos_id: int) -> bool:
    return len(prefix) > 0 and prefix[-1] == eos_id


def check_prefix(prefix: Sequence[int], vocab_size: int, eos_id: int) -> Prefix:
    """Validate a prefix and return it as a tuple."""
    prefix = tuple(int(t) for t in prefix)
    for i, t in enumerate(prefix):
        if not 0 <= t < vocab_size:
            raise MalformedSequenceError(f"token id {t} out of range [0, {vocab_size})")
        if t == eos_id and i != len(prefix) - 1:
            raise MalformedSequenceError("token after EOS")
    return prefix


def as_distribution(probs, vocab_size: int | None = None, tol: float = NORMALIZATION_TOL) -> np.ndarray:
    """Validate a next-token vector and return it as a float64 array."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1:
        raise DistributionError("distribution must be a vector")
    if vocab_size is not None and p.shape[0] != vocab_size:
        raise DistributionError(f"expected {vocab_size} entries, got {p.shape[0]}")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise DistributionError("entries must be finite and non-negative")
    total = p.sum()
    if abs(total - 1.0) > tol:
        raise DistributionError(f"distribution sums to {total!r}, not 1")
    return p


def apply_temperature(probs: np.ndarray, temperature: float) -> np.ndarray:
    """Scale logits by ``1/temperature`` and renormalize; zeros stay zero."""
    if temperature == 1.0:
        return probs
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    out = np.zeros_like(probs)
    nz = probs > 0
    logits = np.log(probs[nz]) / temperature
    logits -= logits.max()
    w = np.exp(logits)
    out[nz] = w / w.sum()
    return out


class SequenceModel(ABC):
    """Autoregressive next-token model over a fixed vocabulary.

    Subclasses implement :meth:`_distribution`; the public
    :meth:`next_distribution` validates the prefix and applies temperature.
    Implementations must be deterministic and immutable after construction.
    """

    def __init__(self, vocab: Vocabulary, temperature: float = 1.0):
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        self.vocab = vocab
        self.temperature = float(temperature)

    @abstractmethod
    def _distribution(self, prefix: Prefix) -> np.ndarray:
        ...

    def next_distribution(self, prefix: Sequence[int]) -> np.ndarray:
        prefix = check_prefix(prefix, self.vocab.size, self.vocab.eos_id)
        if is_complete(prefix, self.vocab.eos_id):
            raise ContractViolation("cannot query the model after a complete prefix")
        probs = self._distribution(prefix)
        return apply_temperature(probs, self.temperature)


class Constrainer(ABC):
    """Prefix-validity oracle.

    ``check(x)`` is True iff some valid complete sequence starts with ``x``.
    Completion is marked by appending EOS, so ``check(x + (eos,))`` says
    whether ``x`` itself is a valid complete sequence.
    """

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab

    @abstractmethod
    def check(self, prefix: Sequence[int]) -> bool:
        ...

    def valid_next(self, prefix: Sequence[int]) -> frozenset:
        """Token ids ``t`` with ``check(prefix + (t,))``.  Subclasses override with
        something faster than one check per token."""
        prefix = tuple(prefix)
        return frozenset(t for t in range(self.vocab.size) if self.check(prefix + (t,)))

    def valid_mask(self, prefix: Sequence[int]) -> np.ndarray:
        mask = np.zeros(self.vocab.size, dtype=bool)
        ids = list(self.valid_next(prefix))
        mask[ids] = True
        return mask


def joint_probability(model: SequenceModel, seq: Sequence[int]) -> float:
    """Product of next-token probabilities along ``seq``, accumulated in log space."""
    return math.exp(joint_log_probability(model, seq))


def joint_log_probability(model: SequenceModel, seq: Sequence[int]) -> float:
    seq = check_prefix(seq, model.vocab.size, model.vocab.eos_id)
    total = 0.0
    for i, tok in enumerate(seq):
        p = model.next_distribution(seq[:i])[tok]
        if p <= 0.0:
            return -math.inf
        total += math.log(p)
    return total


def valid_next_tokens(constrainer: Constrainer, prefix: Sequence[int]) -> frozenset:
    """The set ``C(prefix)``; the prefix itself must be valid."""
    prefix = check_prefix(prefix, constrainer.vocab.size, constrainer.vocab.eos_id)
    if is_complete(prefix, constrainer.vocab.eos_id):
        raise ContractViolation("a complete prefix has no next tokens")
    if not constrainer.check(prefix):
        raise ContractViolation(f"prefix {prefix} is already invalid")
    return constrainer.valid_next(prefix)
