import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from constrained_sampling import UniformModel, Vocabulary
from constrained_sampling.bench import gen_binary_bench, gen_heavy_prefix_instance
from constrained_sampling.constrainers import AcceptAll, build_trie
from constrained_sampling.errors import EmptyLanguageError, InstanceTooLarge, InvalidSampleError
from constrained_sampling.oracle import (
    EmpiricalDistribution,
    chi_square_test,
    em_at_k,
    enumerate_constrained,
    kl_divergence,
    pass_at_k,
    sliding_window_kl,
    tv_distance,
)


def test_binary_oracle_is_uniform_over_17():
    b = gen_binary_bench()
    exact = enumerate_constrained(b.model, b.constrainer, 6)
    assert len(exact) == 17
    assert exact.z == pytest.approx(17 / 32)
    for s in exact.support:
        assert exact.prob(s) == pytest.approx(1 / 17)
    assert sum(exact.probs.values()) == pytest.approx(1.0, abs=1e-9)
    assert exact.truncated_mass == 0.0


def test_heavy_prefix_oracle_values():
    f = gen_heavy_prefix_instance()
    exact = enumerate_constrained(f.model, f.constrainer, 6)
    assert exact.z == pytest.approx(0.406)
    assert exact.prob(f.intended_leaf) == pytest.approx(0.38 / 0.406)
    assert exact.prob(f.heavy_leaf) == pytest.approx(0.006 / 0.406)
    assert exact.argmax() == f.intended_leaf


def test_oracle_truncation_and_errors():
    v = Vocabulary.from_texts(["a"])
    m = UniformModel(v)  # geometric lengths
    exact = enumerate_constrained(m, AcceptAll(v), 3)
    # P(length n) = (1/2)^(n+1); lengths 0..3 kept, the rest truncated
    assert exact.z == pytest.approx(1 - 1 / 16)
    assert exact.truncated_mass == pytest.approx(1 / 16)
    with pytest.raises(InstanceTooLarge):
        enumerate_constrained(m, AcceptAll(v), 50, max_steps=10)
    never = build_trie([(0, 0)], v)
    lenient = UniformModel(v, length=1)
    with pytest.raises(EmptyLanguageError):
        enumerate_constrained(lenient, never, 5)


def test_tv_distance():
    b = gen_binary_bench()
    exact = enumerate_constrained(b.model, b.constrainer, 6)
    emp = EmpiricalDistribution(exact.support)
    assert tv_distance(emp, exact) == pytest.approx(0.0, abs=1e-12)
    one = EmpiricalDistribution([exact.support[0]])
    assert tv_distance(one, exact) == pytest.approx(16 / 17)


def test_chi_square_exact_fit_and_outside_support():
    b = gen_binary_bench()
    exact = enumerate_constrained(b.model, b.constrainer, 6)
    emp = EmpiricalDistribution()
    for s in exact.support:
        emp.add(s, 100)
    res = chi_square_test(emp, exact)
    assert res.pvalue == pytest.approx(1.0) and res.dof == 16
    emp.add((1, 1, 1, 1, 1, 1, b.vocab.eos_id))
    assert chi_square_test(emp, exact).pvalue == 0.0


def test_chi_square_pools_small_bins():
    from constrained_sampling.oracle import ExactDistribution

    exact = ExactDistribution({(0, 4): 0.5, (1, 4): 0.46, (2, 4): 0.02, (3, 4): 0.02}, 1.0)
    emp = EmpiricalDistribution()
    emp.add((0, 4), 50)
    emp.add((1, 4), 44)
    emp.add((2, 4), 4)
    emp.add((3, 4), 2)
    res = chi_square_test(emp, exact)
    # 2 + 2 expected is too small on its own and folds into the 46 bin
    assert res.dof == 1
    assert res.statistic == pytest.approx(0.0)


def test_chi_square_detects_wrong_distribution():
    b = gen_binary_bench()
    exact = enumerate_constrained(b.model, b.constrainer, 6)
    emp = EmpiricalDistribution()
    for i, s in enumerate(exact.support):
        emp.add(s, 200 if i == 0 else 100)
    assert chi_square_test(emp, exact).pvalue < 1e-6


def test_kl_hand_computed():
    v = Vocabulary.from_texts(["0", "1"])
    m = UniformModel(v, length=1)
    eos = v.eos_id
    a, b = (0, eos), (1, eos)
    # Qhat = (3/4, 1/4), P = (1/2, 1/2)
    expected = 0.75 * math.log(1.5) + 0.25 * math.log(0.5)
    assert kl_divergence([a, a, a, b], m) == pytest.approx(expected)
    # constrained to {a}: Z = 1/2, samples all a -> KL to P(.|c) is 0
    assert kl_divergence([a, a], m, math.log(0.5)) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(InvalidSampleError):
        kl_divergence([(0, 0, eos)], m)
    with pytest.raises(ValueError):
        kl_divergence([], m)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=30), st.integers(1, 10))
def test_sliding_window_matches_direct(draws, window):
    v = Vocabulary.from_texts(["0", "1"])
    m = UniformModel(v, length=2)
    eos = v.eos_id
    seqs = [((d >> 1) & 1, d & 1, eos) for d in draws]
    if window > len(seqs):
        with pytest.raises(ValueError):
            sliding_window_kl(seqs, window, m)
        return
    series = sliding_window_kl(seqs, window, m, log_z=0.1)
    assert len(series) == len(seqs) - window + 1
    for x, value in enumerate(series):
        assert value == pytest.approx(kl_divergence(seqs[x:x + window], m, 0.1), abs=1e-12)


def brute_em(n, c, k):
    """Fraction of k-subsets of n items (c correct) holding at least one correct item."""
    items = [True] * c + [False] * (n - c)
    subsets = list(itertools.combinations(range(n), k))
    good = sum(any(items[i] for i in sub) for sub in subsets)
    return Fraction(good, len(subsets))


@given(st.integers(1, 9).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, n), st.integers(1, n))))
def test_em_at_k_matches_subset_enumeration(args):
    n, c, k = args
    assert em_at_k(n, c, k) == pytest.approx(float(brute_em(n, c, k)), abs=1e-15)


def test_em_at_k_values_and_errors():
    assert em_at_k(20, 5, 3) == pytest.approx(1 - 455 / 1140, abs=1e-12)
    assert em_at_k(20, 0, 5) == 0.0
    assert em_at_k(20, 20, 1) == 1.0
    assert em_at_k(20, 4, 1) == pytest.approx(0.2)
    assert pass_at_k is em_at_k
    with pytest.raises(ValueError):
        em_at_k(5, 6, 1)
    with pytest.raises(ValueError):
        em_at_k(5, 1, 6)
