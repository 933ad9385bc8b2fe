import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from constrained_sampling import UniformModel, Vocabulary, joint_log_probability, joint_probability
from constrained_sampling.constrainers import AcceptAll, build_trie
from constrained_sampling.core import apply_temperature, as_distribution, check_prefix, is_complete, valid_next_tokens
from constrained_sampling.errors import (
    ContractViolation,
    DistributionError,
    MalformedSequenceError,
    VocabularyError,
)


def test_vocabulary_appends_eos_last():
    v = Vocabulary.from_texts(["x", "y"])
    assert v.texts == ("x", "y", "<eos>")
    assert v.eos_id == 2 and v.size == 3
    assert v.id_of("y") == 1 and v.text_of(0) == "x"


def test_vocabulary_rejects_duplicates_and_empty():
    with pytest.raises(VocabularyError):
        Vocabulary(("a", "a"), 0)
    with pytest.raises(VocabularyError):
        Vocabulary(("a", ""), 0)
    with pytest.raises(VocabularyError):
        Vocabulary((), 0)
    with pytest.raises(VocabularyError):
        Vocabulary(("a",), 3)
    with pytest.raises(VocabularyError):
        Vocabulary.from_texts(["a"]).id_of("zz")


def test_tokenize_longest_match_and_render():
    v = Vocabulary.from_texts(["ns1.", "ns10.", "fn1", "fn12"])
    toks = v.tokenize("ns10.fn12", add_eos=True)
    assert toks == (1, 3, v.eos_id)
    assert v.render(toks) == "ns10.fn12"
    assert v.render(toks, show_eos=True) == "ns10.fn12<eos>"
    with pytest.raises(VocabularyError):
        v.tokenize("ns2.")


@given(st.lists(st.sampled_from(["ab", "a", "b", "ba"]), max_size=8))
def test_tokenize_render_roundtrip(pieces):
    v = Vocabulary.from_texts(["ab", "a", "b", "ba"])
    text = "".join(pieces)
    assert v.render(v.tokenize(text)) == text


def test_check_prefix_rejects_malformed():
    assert check_prefix([0, 1], 3, 2) == (0, 1)
    with pytest.raises(MalformedSequenceError):
        check_prefix([0, 5], 3, 2)
    with pytest.raises(MalformedSequenceError):
        check_prefix([2, 0], 3, 2)
    assert is_complete((0, 2), 2) and not is_complete((), 2)


def test_as_distribution_validates():
    assert as_distribution([0.5, 0.5]).dtype == np.float64
    for bad in ([0.5, 0.6], [-0.1, 1.1], [np.nan, 1.0], [[1.0]]):
        with pytest.raises(DistributionError):
            as_distribution(bad)
    with pytest.raises(DistributionError):
        as_distribution([1.0], vocab_size=2)


def test_temperature_keeps_zeros_and_sharpens():
    p = np.array([0.6, 0.3, 0.1, 0.0])
    cold = apply_temperature(p, 0.5)
    assert cold[3] == 0.0
    assert cold.sum() == pytest.approx(1.0)
    # T = 1/2 squares and renormalizes
    sq = p**2 / (p**2).sum()
    np.testing.assert_allclose(cold, sq)
    assert apply_temperature(p, 1.0) is p
    with pytest.raises(ValueError):
        apply_temperature(p, 0.0)


def test_model_contract_after_eos():
    v = Vocabulary.from_texts(["0", "1"])
    m = UniformModel(v)
    with pytest.raises(ContractViolation):
        m.next_distribution((0, v.eos_id))


def test_joint_probability_matches_product():
    v = Vocabulary.from_texts(["0", "1"])
    m = UniformModel(v, length=3)
    seq = (0, 1, 1, v.eos_id)
    assert joint_probability(m, seq) == pytest.approx(1 / 8)
    assert joint_log_probability(m, seq) == pytest.approx(math.log(1 / 8))
    # EOS too early has probability zero
    assert joint_log_probability(m, (0, v.eos_id)) == -math.inf


def test_valid_next_tokens_contract(abc_vocab):
    trie = build_trie([(0, 1)], abc_vocab)
    assert valid_next_tokens(trie, (0,)) == frozenset({1})
    assert valid_next_tokens(trie, (0, 1)) == frozenset({abc_vocab.eos_id})
    with pytest.raises(ContractViolation):
        valid_next_tokens(trie, (1,))
    with pytest.raises(ContractViolation):
        valid_next_tokens(trie, (0, 1, abc_vocab.eos_id))
    assert valid_next_tokens(AcceptAll(abc_vocab), ()) == frozenset(range(4))
