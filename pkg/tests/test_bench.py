import numpy as np
import pytest

from constrained_sampling.bench import (
    ApiBenchInstance,
    evaluate_api_bench,
    gen_api_bench,
    gen_binary_bench,
    gen_heavy_prefix_instance,
    random_instance,
)
from constrained_sampling.core import joint_probability
from constrained_sampling.decode import DecodeSession
from constrained_sampling.errors import GenerationError
from constrained_sampling.oracle import enumerate_constrained


def test_binary_bench_has_17_strings():
    b = gen_binary_bench()
    exact = enumerate_constrained(b.model, b.constrainer, 6)
    assert len(exact) == b.num_valid == 17
    assert exact.z == pytest.approx(17 / 32)
    assert b.zeros in exact.support
    texts = {b.vocab.render(s) for s in exact.support}
    assert "00000" in texts and all(t == "00000" or t.startswith("1") for t in texts)


def test_heavy_prefix_instance_structure():
    f = gen_heavy_prefix_instance()
    assert not f.constrainer.check(f.vocab.tokenize("matrix_rank"))
    assert f.constrainer.check(f.heavy_leaf) and f.constrainer.check(f.intended_leaf)
    exact = enumerate_constrained(f.model, f.constrainer, 6)
    assert exact.argmax() == f.intended_leaf


def test_random_instance_is_deterministic():
    a, b = random_instance(7), random_instance(7)
    assert a.max_len == b.max_len and a.vocab.size == b.vocab.size
    prefix = (0,)
    assert np.array_equal(a.model.next_distribution(prefix), b.model.next_distribution(prefix))
    assert a.vocab.size <= 6


@pytest.fixture(scope="module")
def small_api():
    return gen_api_bench(num_apis=30, seed=1)


def test_api_bench_determinism(small_api):
    again = gen_api_bench(num_apis=30, seed=1)
    assert again.api_lines("B") == small_api.api_lines("B")
    p, q = small_api.problems[3], again.problems[3]
    assert p.targets == q.targets
    assert np.array_equal(p.model.next_distribution(()), q.model.next_distribution(()))
    other = gen_api_bench(num_apis=30, seed=2)
    assert other.api_lines("B") != small_api.api_lines("B")


def test_api_versions_differ_by_the_compat_prefix(small_api):
    inst = small_api
    a_lines = inst.valid_sequences("A")
    assert len(a_lines) == len(inst.apis)
    b_lines = set(inst.valid_sequences("B"))
    for i, short in enumerate(a_lines):
        assert tuple(inst.compat) + short in b_lines
        assert inst.long_form(i)[len(inst.compat):] == short
    assert len(b_lines) == len(inst.apis) + len(inst.natives)


def test_api_problem_models_cover_both_spellings(small_api):
    for prob in small_api.problems[:10]:
        for version in ("A", "B"):
            target = prob.targets[version]
            assert small_api.constrainer(version).check(target)
            assert joint_probability(prob.model, target) > 0
        assert joint_probability(prob.model, prob.targets["A"]) > joint_probability(prob.model, prob.targets["B"])
    assert 0.0 < small_api.shared_prefix_fraction < 1.0


def test_api_bench_roundtrip(tmp_path, small_api):
    small_api.save(tmp_path)
    loaded = ApiBenchInstance.load(tmp_path)
    assert loaded.api_lines("A") == small_api.api_lines("A")
    assert loaded.api_lines("B") == small_api.api_lines("B")
    for p, q in zip(small_api.problems, loaded.problems):
        assert p.targets == q.targets
        assert np.allclose(p.model.next_distribution(p.targets["B"][:2]),
                           q.model.next_distribution(q.targets["B"][:2]))
    (tmp_path / "manifest.json").write_text("{}")
    with pytest.raises(GenerationError):
        ApiBenchInstance.load(tmp_path)


def test_api_bench_rejects_bad_parameters():
    with pytest.raises(GenerationError):
        gen_api_bench(num_apis=1)
    with pytest.raises(GenerationError):
        gen_api_bench(short_weight=0.9, long_weight=0.2)
    with pytest.raises(GenerationError):
        gen_api_bench(num_distractors=0)
    with pytest.raises(GenerationError):
        small = gen_api_bench(num_apis=2)
        small.valid_sequences("C")


def test_two_api_catalog_shows_the_heavy_prefix_failure():
    inst = gen_api_bench(num_apis=2, seed=0)
    prob = inst.problems[0]
    assert prob.shared_prefix
    cons = inst.constrainer("B")
    masked = DecodeSession(prob.model, cons, strategy="constrained", greedy=True).sample()
    exact = DecodeSession(prob.model, cons, strategy="backtrack", greedy=True).sample()
    assert masked.tokens != prob.targets["B"]
    assert exact.tokens == prob.targets["B"]


def test_evaluate_api_bench_orders_strategies(small_api):
    em = {s: evaluate_api_bench(small_api, "B", s, n_samples=5).em[1]
          for s in ("unconstrained", "constrained", "backtrack")}
    assert em["backtrack"] > em["constrained"] > em["unconstrained"]
    res = evaluate_api_bench(small_api, "B", "backtrack", n_samples=5, problems=[0, 1], ks=(1, 3, 10))
    assert set(res.em) == {1, 3}
    assert len(res.model_calls) == 2 * 6
