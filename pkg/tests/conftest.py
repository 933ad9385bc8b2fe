import numpy as np
import pytest

from constrained_sampling import TableModel, Vocabulary, build_trie


@pytest.fixture
def abc_vocab():
    return Vocabulary.from_texts(["a", "b", "c"])


def table_from_dict(vocab, rows):
    """Rows given as {prefix: {token: p}} with EOS filling any remainder."""
    dense = {}
    for prefix, probs in rows.items():
        row = np.zeros(vocab.size)
        for t, p in probs.items():
            row[t] = p
        dense[prefix] = row
    return TableModel(vocab, dense)


@pytest.fixture
def small_trie_instance(abc_vocab):
    """Two-level model over a/b/c with a trie that kills the heavy branch."""
    v = abc_vocab
    a, b, c, eos = 0, 1, 2, v.eos_id
    rows = {
        (): {a: 0.7, b: 0.2, c: 0.1},
        (a,): {a: 0.5, b: 0.3, eos: 0.2},
        (b,): {a: 0.1, eos: 0.9},
        (c,): {c: 0.4, eos: 0.6},
        (a, a): {eos: 1.0},
        (a, b): {eos: 1.0},
        (b, a): {eos: 1.0},
        (c, c): {eos: 1.0},
    }
    model = table_from_dict(v, rows)
    trie = build_trie([(a, b), (b,), (b, a), (c, c)], v)
    return model, trie


@pytest.fixture
def two_level_instance():
    """Invalid mass found two levels down; the held-token law differs from P(.|c) here.

    Valid: A a1, A a2, B.  P = 1/8, 1/4, 1/2, so P(.|c) = 1/7, 2/7, 4/7.
    Enumerating the sampler's random branches by hand gives 1/7, 9/28, 15/28:
    A a2 is returned with probability 1/4 before the invalid mass under
    A a1 is ever seen, and only the A a1 branch revises the root.
    """
    v = Vocabulary.from_texts(["A", "B", "a1", "a2", "bad"])
    A, B, a1, a2, bad, eos = 0, 1, 2, 3, 4, v.eos_id
    rows = {
        (): {A: 0.5, B: 0.5},
        (A,): {a1: 0.5, a2: 0.5},
        (A, a1): {eos: 0.5, bad: 0.5},
        (A, a2): {eos: 1.0},
        (B,): {eos: 1.0},
        (A, a1, bad): {eos: 1.0},
    }
    model = table_from_dict(v, rows)
    trie = build_trie([(A, a1), (A, a2), (B,)], v)
    law = {(A, a1, eos): 1 / 7, (A, a2, eos): 9 / 28, (B, eos): 15 / 28}
    return model, trie, law


ACCEPTANCE_LINES: list = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line for the acceptance summary."""

    def _report(label, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
