import json

import numpy as np
import pytest

from constrained_sampling import NGramModel, RandomTableModel, TableModel, UniformModel, Vocabulary
from constrained_sampling.errors import DistributionError, VocabularyError
from constrained_sampling.models import SparseRow


@pytest.fixture
def v():
    return Vocabulary.from_texts(["0", "1"])


def test_uniform_free_length(v):
    m = UniformModel(v)
    np.testing.assert_allclose(m.next_distribution(()), [1 / 3] * 3)


def test_uniform_fixed_length_forces_eos(v):
    m = UniformModel(v, length=2)
    np.testing.assert_allclose(m.next_distribution(()), [0.5, 0.5, 0.0])
    np.testing.assert_allclose(m.next_distribution((0, 1)), [0.0, 0.0, 1.0])


def test_table_row_lookup_and_default(v):
    m = TableModel(v, {(): [0.2, 0.3, 0.5]}, default=SparseRow((2,), (1.0,), 0.0))
    np.testing.assert_allclose(m.next_distribution(()), [0.2, 0.3, 0.5])
    np.testing.assert_allclose(m.next_distribution((1, 1)), [0, 0, 1])
    bare = TableModel(v, {(): [0.2, 0.3, 0.5]})
    with pytest.raises(DistributionError):
        bare.next_distribution((0,))


def test_table_rejects_unnormalized_rows(v):
    with pytest.raises(DistributionError):
        TableModel(v, {(): [0.2, 0.3, 0.6]})
    with pytest.raises(DistributionError):
        TableModel(v, {(): [0.2, 0.3]})
    with pytest.raises(DistributionError):
        TableModel(v, {(): SparseRow((0,), (0.5,), 0.1)})


def test_table_renormalizes_within_load_tolerance(v):
    m = TableModel(v, {(): [0.2, 0.3, 0.5000004]})
    assert m.next_distribution(()).sum() == pytest.approx(1.0, abs=1e-12)


def test_table_roundtrip(tmp_path, v):
    m = TableModel(
        v,
        {(): [0.25, 0.25, 0.5], (0,): SparseRow((1,), (0.8,), 0.1)},
        default=SparseRow((2,), (0.9,), 0.05),
        temperature=0.7,
    )
    path = tmp_path / "m.json"
    m.save(path)
    data = json.loads(path.read_text())
    assert data["format"] == "table-model/1"
    assert [e["eos"] for e in data["vocabulary"]] == [False, False, True]
    back = TableModel.load(path)
    assert back.vocab == v and back.temperature == 0.7
    for prefix in [(), (0,), (1, 1)]:
        np.testing.assert_allclose(back.next_distribution(prefix), m.next_distribution(prefix))


def test_table_load_rejects_bad_vocab(tmp_path):
    data = {"vocabulary": [{"id": 0, "text": "a"}, {"id": 1, "text": "b"}], "rows": []}
    with pytest.raises(VocabularyError):
        TableModel.from_dict(data)
    data["vocabulary"][1]["eos"] = True
    data["vocabulary"][1]["id"] = 3
    with pytest.raises(VocabularyError):
        TableModel.from_dict(data)
    with pytest.raises(DistributionError):
        TableModel.from_dict({"format": "other/2"})


def test_temperature_applies_to_table(v):
    m = TableModel(v, {(): [0.2, 0.3, 0.5]}, temperature=0.5)
    p = np.array([0.2, 0.3, 0.5]) ** 2
    np.testing.assert_allclose(m.next_distribution(()), p / p.sum())


def test_random_table_is_pure_function_of_seed(v):
    a = RandomTableModel(v, seed=4, max_len=3)
    b = RandomTableModel(v, seed=4, max_len=3)
    c = RandomTableModel(v, seed=5, max_len=3)
    np.testing.assert_array_equal(a.next_distribution((1,)), b.next_distribution((1,)))
    assert not np.allclose(a.next_distribution((1,)), c.next_distribution((1,)))
    np.testing.assert_array_equal(a.next_distribution((0, 1, 1)), [0, 0, 1])


def test_random_table_materializes(v):
    m = RandomTableModel(v, seed=1, max_len=2)
    t = m.to_table()
    assert len(t.rows) == 1 + 2 + 4
    np.testing.assert_array_equal(t.next_distribution((1, 0)), m.next_distribution((1, 0)))


def test_ngram_counts(v):
    eos = v.eos_id
    m = NGramModel.fit(v, [(0, 1), (0, 0)], order=2, add_k=0.0)
    np.testing.assert_allclose(m.next_distribution(()), [1.0, 0.0, 0.0])
    # after "0": 1 (first string), 0 and EOS (second string) once each
    np.testing.assert_allclose(m.next_distribution((0,)), [1 / 3, 1 / 3, 1 / 3])
    np.testing.assert_allclose(m.next_distribution((0, 1)), [0.0, 0.0, 1.0])
    smoothed = NGramModel.fit(v, [(0, 1, eos)], order=1, add_k=1.0)
    np.testing.assert_allclose(smoothed.next_distribution((1,)), [2 / 6, 2 / 6, 2 / 6])
    unseen = NGramModel(v, 2, {}, add_k=0.0)
    np.testing.assert_allclose(unseen.next_distribution(()), [1 / 3] * 3)
