"""The four decoding strategies.

``backtrack_sample`` keeps, for every prefix it has expanded, an estimate
``Q[x]`` of the probability that a model continuation of ``x`` is valid and
a held next token ``N[x]`` distributed as ``P(t|x) Q[x+t]`` (normalized).
Each round collects the sequence the ``N`` chain spells out; if it is
incomplete the last prefix is expanded, the new invalid mass is pushed up
the path, and every ancestor's held token is re-validated by rejection so
that it stays distributed under the updated estimates.  Replacing a held
token is what backtracking means here.

Held tokens are revised only along the path being expanded, and a sample
can be returned before invalid mass in a sibling branch has been seen, so
the returned law can differ from P(.|c) (``tests/branch_law.py`` computes it
exactly on small instances).  With Q shared and fully explored the draws
are exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import Constrainer, Prefix, is_complete
from ..errors import BudgetExceeded, DeadEndError, EmptyLanguageError, InvariantViolation
from .session import DecodeSession, SampleRecord


def draw(weights: np.ndarray, u: float) -> int:
    """Inverse-CDF draw from unnormalized ``weights`` using one uniform ``u``."""
    cdf = np.cumsum(weights)
    total = cdf[-1]
    if not total > 0:
        raise DeadEndError("cannot draw from an all-zero weight vector")
    idx = int(np.searchsorted(cdf, u * total, side="right"))
    if idx >= len(weights):
        # u * total rounded up to the last breakpoint
        idx = int(np.nonzero(weights > 0)[0][-1])
    return idx


def argmax(weights: np.ndarray) -> int:
    """Largest weight; ties go to the lowest token id."""
    if not weights.max() > 0:
        raise DeadEndError("cannot take argmax of an all-zero weight vector")
    return int(np.argmax(weights))


def collect_sequence(n_map: dict) -> Prefix:
    """Follow held next tokens from the empty prefix until one is missing."""
    s: Prefix = ()
    steps = 0
    limit = len(n_map)
    while s in n_map:
        s = s + (n_map[s],)
        steps += 1
        if steps > limit:
            raise InvariantViolation("next-token chain is longer than the map itself")
    return s


@dataclass(frozen=True)
class ScanResult:
    valid: np.ndarray      # bool mask of tokens found (or assumed) valid
    checked: np.ndarray    # bool mask of tokens the constrainer was asked about
    checks: int

    @property
    def valid_set(self) -> frozenset:
        return frozenset(int(t) for t in np.nonzero(self.valid)[0])

    @property
    def assumed_invalid(self) -> frozenset:
        return frozenset(int(t) for t in np.nonzero(~self.checked)[0])


def lazy_topp_validity_scan(probs: np.ndarray, constrainer: Constrainer, prefix: Prefix, p: float) -> ScanResult:
    """Check tokens from most to least probable until the known-valid share exceeds ``p``.

    The share is ``valid / (valid + unchecked)``.  Tokens left unchecked are
    treated as invalid for this step.  ``p = 1`` checks everything.
    """
    if not 0.0 < p <= 1.0:
        raise ValueError("p must be in (0, 1]")
    v = len(probs)
    prefix = tuple(prefix)
    if p >= 1.0:
        return ScanResult(constrainer.valid_mask(prefix), np.ones(v, dtype=bool), v)
    order = np.argsort(-probs, kind="stable")
    # unchecked mass after checking order[:i+1] is tail[i+1]
    tail = np.append(np.cumsum(probs[order][::-1])[::-1], 0.0)
    valid = np.zeros(v, dtype=bool)
    checked = np.zeros(v, dtype=bool)
    valid_mass = 0.0
    checks = 0
    for i, t in enumerate(order):
        t = int(t)
        checked[t] = True
        checks += 1
        if constrainer.check(prefix + (t,)):
            valid[t] = True
            valid_mass += probs[t]
        denom = valid_mass + tail[i + 1]
        if denom > 0 and valid_mass / denom > p:
            break
    return ScanResult(valid, checked, checks)


# shared building blocks ----------------------------------------------------

def _pick(session: DecodeSession, weights: np.ndarray) -> int:
    if session.config.greedy:
        return argmax(weights)
    return draw(weights, session.uniform())


def _expand(session: DecodeSession, s: Prefix) -> tuple[np.ndarray, float]:
    """Fetch the model row for ``s``; if ``s`` is new, record child validity in Q.

    Returns the row and the probability mass newly found invalid below ``s``.
    """
    row = session.model_row(s)
    q = session.q
    if q.is_old(s):
        return row, 0.0
    if session.config.top_p >= 1.0:
        valid = session.constrainer.valid_mask(s)
        session.count_checks(len(valid))
    else:
        scan = lazy_topp_validity_scan(row, session.constrainer, s, session.config.top_p)
        session.count_checks(scan.checks)
        valid = scan.valid
        for t in scan.assumed_invalid:
            q.assumed_invalid.add(s + (t,))
    q.children[s] = valid.astype(np.float64)
    session.remember_row(s, row)
    delta = float(row[~valid].sum())
    session.log("expand", s, delta)
    return row, delta


def _propagate(session: DecodeSession, s: Prefix, delta: float) -> tuple[list, list]:
    """Subtract newly invalid mass from Q along the path, longest prefix first.

    With ``d`` the mass lost at a prefix, its parent loses ``P(tok|parent) * d``.
    Returns the path's Q values before and after.
    """
    q = session.q
    n = len(s)
    before = [q.get(s[:j]) for j in range(n + 1)]
    after = list(before)
    d = delta
    after[n] = max(before[n] - d, 0.0)
    for j in range(n - 1, -1, -1):
        d = session.rows[s[:j]][s[j]] * d
        after[j] = max(before[j] - d, 0.0)
    for j in range(n + 1):
        q.set(s[:j], after[j])
    return before, after


def acceptance_ratio(old_weights: np.ndarray, new_weights: np.ndarray, held: int) -> float:
    """P_Q'(held|x) / P_Q(held|x) from the unnormalized weight vectors before and after."""
    return float((new_weights[held] / old_weights[held]) * (old_weights.sum() / new_weights.sum()))


def rejection_update(ratio: float, weights: np.ndarray, held: int, uniform, fused: bool = True) -> int:
    """Keep ``held`` with probability ``ratio``, else redraw from ``weights`` without it.

    ``weights`` are the updated (unnormalized) P_Q' weights and ``uniform`` a
    zero-argument source of uniforms.  If ``held`` was distributed as P_Q, the
    result is distributed as P_Q'.
    """
    if ratio >= 1.0:
        return held
    others = weights.copy()
    others[held] = 0.0
    rest = others.sum()
    if not rest > 0:
        return held
    if fused:
        merged = others * ((1.0 - ratio) / rest)
        merged[held] = ratio
        return draw(merged, uniform())
    if uniform() < ratio:
        return held
    return draw(others, uniform())


def _revise_ancestors(session: DecodeSession, s: Prefix, before: list, after: list,
                      max_distance: int | None) -> None:
    """Re-validate the held token of each ancestor whose child estimate just dropped."""
    cfg = session.config
    q = session.q
    n_map = session.n
    length = len(s)
    lowest = 0 if max_distance is None else max(0, length - max_distance)
    for j in range(length - 1, lowest - 1, -1):
        if after[j + 1] == before[j + 1] or after[j] <= 0.0:
            continue
        x = s[:j]
        held = s[j]
        weights = session.rows[x] * q.child_vector(x)
        if cfg.greedy:
            best = argmax(weights)
            if best != held:
                n_map[x] = best
                session.count_backtrack()
                session.log("reject", x, held, None, best)
            continue
        # same value as acceptance_ratio, read off the path sums already at hand
        ratio = (after[j + 1] / before[j + 1]) * (before[j] / after[j])
        if ratio >= 1.0:
            continue
        new = rejection_update(ratio, weights, held, session.uniform, cfg.fused_rejection)
        session.log("reject", x, held, ratio, new)
        if new != held:
            n_map[x] = new
            session.count_backtrack()


def q_path_probability(session: DecodeSession, s: Prefix) -> float:
    """Probability of spelling ``s`` under P_Q, using the session's current rows and Q."""
    q = session.q
    total = 1.0
    for i, tok in enumerate(s):
        x = s[:i]
        weights = session.rows[x] * q.child_vector(x)
        total *= weights[tok] / weights.sum()
    return total


# strategies ---------------------------------------------------------------

def backtrack_sample(session: DecodeSession, max_distance: int | None = None) -> SampleRecord:
    cfg = session.config
    session.begin_sample(reset_q=not cfg.share_q)
    if max_distance is not None and math.isinf(max_distance):
        max_distance = None
    # "exact" marks the unbounded stochastic configuration, not a proven law
    exact = (
        max_distance is None and cfg.top_p >= 1.0 and not cfg.greedy and not cfg.skip_rejection
    )
    while True:
        s = collect_sequence(session.n)
        if is_complete(s, session.vocab.eos_id):
            return session.finish_sample(s, exact=exact)
        if len(s) >= cfg.max_length:
            raise BudgetExceeded(
                f"prefix reached max_length={cfg.max_length}",
                q_root=session.q.root, deepest_prefix=s,
            )
        row, delta = _expand(session, s)
        weights = row * session.q.child_vector(s)
        alive = weights.sum() > 0
        if alive:
            session.n[s] = _pick(session, weights)
        if delta > 0:
            before, after = _propagate(session, s, delta)
            if after[0] <= 0.0:
                raise EmptyLanguageError("every continuation of the empty prefix is invalid")
            if not cfg.skip_rejection:
                _revise_ancestors(session, s, before, after, max_distance)
        elif not alive:
            raise DeadEndError(f"no valid continuation of {s}")
        if cfg.debug_q:
            session.check_q_invariants()


def backtrack_sample_bounded(session: DecodeSession, max_distance: int) -> SampleRecord:
    """Backtracking restricted to the ``max_distance`` nearest ancestors.

    The result is not exact for finite distances; ``math.inf`` removes the
    limit and gives exactly ``backtrack_sample``.
    """
    if not max_distance >= 1:
        raise ValueError("max_distance must be a positive integer")
    return backtrack_sample(session, max_distance=max_distance)


def asap_sample(session: DecodeSession) -> SampleRecord:
    """Forward sampling from P_Q with Q shared across calls; never revises a token."""
    cfg = session.config
    session.begin_sample(reset_q=False)
    retries = 0
    s: Prefix = ()
    while True:
        if is_complete(s, session.vocab.eos_id):
            return session.finish_sample(s, exact=False, retries=retries)
        if len(s) >= cfg.max_length:
            return session.finish_sample(s, exact=False, truncated=True, retries=retries)
        row, delta = _expand(session, s)
        if delta > 0:
            _, after = _propagate(session, s, delta)
            if after[0] <= 0.0:
                raise EmptyLanguageError("every continuation of the empty prefix is invalid")
        weights = row * session.q.child_vector(s)
        if not weights.sum() > 0:
            # unsound constrainer: Q now knows this prefix is dead, start over
            retries += 1
            session.n = {}
            s = ()
            continue
        t = _pick(session, weights)
        session.n[s] = t
        s = s + (t,)
        if cfg.debug_q:
            session.check_q_invariants()


def sample_constrained_greedy(session: DecodeSession) -> SampleRecord:
    """Per-step masking and renormalization (never revises a token)."""
    cfg = session.config
    session.begin_sample(reset_q=True)
    s: Prefix = ()
    while True:
        if is_complete(s, session.vocab.eos_id):
            return session.finish_sample(s, exact=False)
        if len(s) >= cfg.max_length:
            return session.finish_sample(s, exact=False, truncated=True)
        row = session.model_row(s)
        scan = lazy_topp_validity_scan(row, session.constrainer, s, cfg.top_p)
        session.count_checks(scan.checks)
        weights = row * scan.valid
        if not weights.sum() > 0:
            raise DeadEndError(f"no valid continuation of {s}")
        s = s + (_pick(session, weights),)


def sample_unconstrained(session: DecodeSession) -> SampleRecord:
    """Plain ancestral sampling; with ``top_p < 1`` this is nucleus sampling."""
    from ..constrainers import AcceptAll

    cfg = session.config
    session.begin_sample(reset_q=True)
    accept = AcceptAll(session.vocab)
    s: Prefix = ()
    while True:
        if is_complete(s, session.vocab.eos_id):
            return session.finish_sample(s, exact=False)
        if len(s) >= cfg.max_length:
            return session.finish_sample(s, exact=False, truncated=True)
        row = session.model_row(s)
        if cfg.top_p < 1.0:
            row = row * lazy_topp_validity_scan(row, accept, s, cfg.top_p).valid
        s = s + (_pick(session, row),)


def run(session: DecodeSession) -> SampleRecord:
    strategy = session.config.strategy
    if strategy == "unconstrained":
        return sample_unconstrained(session)
    if strategy == "constrained":
        return sample_constrained_greedy(session)
    if strategy == "asap":
        return asap_sample(session)
    return backtrack_sample(session, max_distance=session.config.max_backtrack)
