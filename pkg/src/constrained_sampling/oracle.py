"""Brute-force ground truth and the statistics used to compare samplers against it."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .core import Constrainer, Prefix, SequenceModel, joint_log_probability
from .errors import EmptyLanguageError, InstanceTooLarge, InvalidSampleError

DEFAULT_MAX_STEPS = 1_000_000


@dataclass
class ExactDistribution:
    """P(s | c) over valid complete sequences.

    ``z`` is the model mass of the valid complete sequences found
    (``sum_valid P(s)``) and ``truncated_mass`` the valid prefix mass that
    was cut off by the length limit.
    """

    probs: dict
    z: float
    truncated_mass: float = 0.0
    log_probs: dict = field(default_factory=dict, repr=False)

    @property
    def log_z(self) -> float:
        return math.log(self.z)

    @property
    def support(self) -> list:
        return sorted(self.probs)

    def __len__(self) -> int:
        return len(self.probs)

    def prob(self, seq: Sequence[int]) -> float:
        return self.probs.get(tuple(seq), 0.0)

    def argmax(self) -> Prefix:
        return max(sorted(self.probs), key=lambda s: self.probs[s])


def enumerate_constrained(
    model: SequenceModel,
    constrainer: Constrainer,
    max_len: int,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> ExactDistribution:
    """Enumerate every valid complete sequence with at most ``max_len`` content tokens.

    Invalid prefixes are pruned as soon as the constrainer rejects them.
    """
    eos = model.vocab.eos_id
    leaves: dict = {}
    truncated = 0.0
    steps = 0
    stack = [((), 0.0)]
    while stack:
        prefix, logp = stack.pop()
        steps += 1
        if steps > max_steps:
            raise InstanceTooLarge(f"enumeration exceeded {max_steps} expanded prefixes")
        row = model.next_distribution(prefix)
        for t in np.nonzero(row > 0)[0]:
            t = int(t)
            child = prefix + (t,)
            if not constrainer.check(child):
                continue
            child_logp = logp + math.log(row[t])
            if t == eos:
                leaves[child] = child_logp
            elif len(child) > max_len:
                truncated += math.exp(child_logp)
            else:
                stack.append((child, child_logp))
    if not leaves:
        raise EmptyLanguageError("no valid complete sequence has positive probability")
    lps = np.array(list(leaves.values()))
    log_z = float(np.logaddexp.reduce(lps))
    probs = {s: math.exp(lp - log_z) for s, lp in leaves.items()}
    return ExactDistribution(probs, math.exp(log_z), truncated, leaves)


class EmpiricalDistribution:
    """Multiset of sampled sequences."""

    def __init__(self, samples: Iterable[Sequence[int]] = ()):
        self.counts: Counter = Counter(tuple(s) for s in samples)

    def add(self, seq: Sequence[int], count: int = 1) -> None:
        self.counts[tuple(seq)] += count

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def __len__(self) -> int:
        return self.total

    def freq(self, seq: Sequence[int]) -> float:
        total = self.total
        return self.counts.get(tuple(seq), 0) / total if total else 0.0

    def frequencies(self) -> dict:
        total = self.total
        return {s: c / total for s, c in self.counts.items()}


def tv_distance(empirical: EmpiricalDistribution, exact: ExactDistribution) -> float:
    """Half the L1 distance between sample frequencies and the exact distribution."""
    freqs = empirical.frequencies()
    keys = set(freqs) | set(exact.probs)
    return 0.5 * sum(abs(freqs.get(s, 0.0) - exact.probs.get(s, 0.0)) for s in keys)


@dataclass(frozen=True)
class ChiSquareResult:
    statistic: float
    dof: int
    pvalue: float
    outside_support: int


def chi_square_test(empirical: EmpiricalDistribution, exact: ExactDistribution,
                    min_expected: float = 5.0) -> ChiSquareResult:
    """Goodness of fit; bins with expected count below ``min_expected`` are pooled.

    Any sample outside the exact support gives p = 0.
    """
    n = empirical.total
    outside = sum(c for s, c in empirical.counts.items() if s not in exact.probs)
    if outside:
        return ChiSquareResult(math.inf, 0, 0.0, outside)
    support = exact.support
    expected = np.array([exact.probs[s] * n for s in support])
    observed = np.array([empirical.counts.get(s, 0) for s in support], dtype=np.float64)
    small = expected < min_expected
    if small.any():
        pooled_e = expected[small].sum()
        pooled_o = observed[small].sum()
        expected = np.append(expected[~small], pooled_e)
        observed = np.append(observed[~small], pooled_o)
        if pooled_e < min_expected and len(expected) > 1:
            # fold an undersized pool into the smallest regular bin
            i = int(np.argmin(expected[:-1]))
            expected[i] += expected[-1]
            observed[i] += observed[-1]
            expected, observed = expected[:-1], observed[:-1]
    if len(expected) < 2:
        return ChiSquareResult(0.0, 0, 1.0, 0)
    expected = expected * (observed.sum() / expected.sum())
    stat, p = stats.chisquare(observed, expected)
    return ChiSquareResult(float(stat), len(expected) - 1, float(p), 0)


def _log_model_probs(model: SequenceModel, seqs: Iterable[Prefix], cache: dict) -> dict:
    for s in seqs:
        if s not in cache:
            lp = joint_log_probability(model, s)
            if lp == -math.inf:
                raise InvalidSampleError(f"sample {s} has zero model probability")
            cache[s] = lp
    return cache


def kl_divergence(samples, model: SequenceModel, log_z: float | None = None,
                  _cache: dict | None = None) -> float:
    """Plug-in ``sum_s Qhat(s) log(Qhat(s) / P_LM(s))`` over the sampled sequences.

    ``samples`` is an :class:`EmpiricalDistribution` or an iterable of
    sequences.  When ``log_z`` (log of the valid mass, i.e.
    ``ExactDistribution.log_z``) is given it is added, which turns the
    value into the divergence from the constrained target P(.|c).
    """
    emp = samples if isinstance(samples, EmpiricalDistribution) else EmpiricalDistribution(samples)
    n = emp.total
    if n == 0:
        raise ValueError("no samples")
    cache = _log_model_probs(model, emp.counts, {} if _cache is None else _cache)
    total = 0.0
    for s, c in emp.counts.items():
        q = c / n
        total += q * (math.log(q) - cache[s])
    if log_z is not None:
        total += log_z
    return total


def sliding_window_kl(stream: Sequence[Sequence[int]], window: int, model: SequenceModel,
                      log_z: float | None = None) -> np.ndarray:
    """KL of every contiguous window ``stream[x : x + window]``; entry ``x`` starts at sample ``x``."""
    stream = [tuple(s) for s in stream]
    if window < 1 or window > len(stream):
        raise ValueError(f"window {window} does not fit a stream of {len(stream)} samples")
    cache = _log_model_probs(model, set(stream), {})
    counts = Counter(stream[:window])
    out = np.empty(len(stream) - window + 1)

    def value():
        total = 0.0
        for s, c in counts.items():
            q = c / window
            total += q * (math.log(q) - cache[s])
        return total + (log_z or 0.0)

    out[0] = value()
    for x in range(1, len(out)):
        gone = stream[x - 1]
        counts[gone] -= 1
        if counts[gone] == 0:
            del counts[gone]
        counts[stream[x + window - 1]] += 1
        out[x] = value()
    return out


def em_at_k(n: int, c: int, k: int) -> float:
    """Unbiased chance that at least one of ``k`` draws (of ``n``, ``c`` correct) is correct."""
    if not 0 <= c <= n:
        raise ValueError("need 0 <= c <= n")
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    if n - c < k:
        return 1.0
    return float(1 - Fraction(math.comb(n - c, k), math.comb(n, k)))


pass_at_k = em_at_k
