from __future__ import annotations

import numpy as np
import pytest

from app.services import retrieval
from app.services.errors import KOutOfRange, MatrixFormatError


def _sort_rank(s: np.ndarray, i: int) -> int:
    order = sorted(range(s.shape[1]), key=lambda j: (-s[i, j], j))
    return order.index(i)


def _oracle_recall(m: np.ndarray, k: int, direction: str) -> float:
    s = m if direction == "i2t" else m.T
    q = min(s.shape)
    return 100.0 * sum(_sort_rank(s, i) < k for i in range(q)) / q


def test_identity_matrix_is_perfect():
    report = retrieval.evaluate_retrieval(np.eye(20))
    assert report.i2t_r1 == report.t2i_r1 == 100.0
    assert report.mean_recall == 100.0
    assert (report.images, report.texts) == (20, 20)


def test_reversed_diagonal_misses_top_one():
    m = np.fliplr(np.eye(10))
    assert retrieval.recall_at_k(m, 1, "i2t") == 0.0
    assert retrieval.recall_at_k(m, 1, "t2i") == 0.0


@pytest.mark.parametrize("rounding", [None, 1])
def test_recall_matches_sort_oracle(rounding):
    rng = np.random.default_rng(5)
    for _ in range(50):
        m = rng.random((20, 20))
        if rounding is not None:
            m = np.round(m, rounding)
        for d in retrieval.DIRECTIONS:
            for k in (1, 5, 10):
                assert retrieval.recall_at_k(m, k, d) == pytest.approx(_oracle_recall(m, k, d))


def test_ties_go_to_lower_index():
    m = np.ones((3, 3))
    assert retrieval.ranks(m, "i2t").tolist() == [0, 1, 2]


def test_recall_monotone_in_k():
    m = np.random.default_rng(1).random((30, 30))
    values = [retrieval.recall_at_k(m, k) for k in range(1, 31)]
    assert values == sorted(values)
    assert values[-1] == 100.0


def test_invariant_under_monotone_transform():
    rng = np.random.default_rng(2)
    for _ in range(20):
        m = rng.normal(size=(15, 15))
        assert retrieval.evaluate_retrieval(m) == retrieval.evaluate_retrieval(np.exp(3 * m))


def test_non_square_queries_only_paired_indices():
    m = np.zeros((3, 5))
    m[0, 0] = m[1, 1] = m[2, 2] = 1.0
    assert retrieval.recall_at_k(m, 1, "i2t") == 100.0
    assert retrieval.recall_at_k(m, 1, "t2i") == 100.0
    with pytest.raises(KOutOfRange):
        retrieval.recall_at_k(m, 4, "t2i")


@pytest.mark.parametrize("k", [0, 21])
def test_k_out_of_range(k):
    with pytest.raises(KOutOfRange):
        retrieval.recall_at_k(np.eye(20), k)


def test_rejects_non_finite():
    with pytest.raises(ValueError):
        retrieval.as_similarity_matrix([[1.0, float("nan")]])


def test_matrix_file_roundtrip(tmp_path):
    m = np.random.default_rng(3).random((4, 6))
    path = tmp_path / "sim.txt"
    retrieval.write_similarity_matrix(m, path)
    assert np.array_equal(retrieval.read_similarity_matrix(path), m)


@pytest.mark.parametrize("text", ["", "2 2\n1 0 0", "2 x\n1 0 0 1", "0 2\n", "1 2\n1 inf"])
def test_matrix_file_errors(tmp_path, text):
    path = tmp_path / "bad.txt"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(MatrixFormatError):
        retrieval.read_similarity_matrix(path)


def test_similarity_from_embeddings(tmp_path):
    (tmp_path / "img.txt").write_text("2 2\n1 0\n0 1\n", encoding="utf-8")
    (tmp_path / "txt.txt").write_text("3 2\n1 0\n0 2\n1 1\n", encoding="utf-8")
    sim = retrieval.similarity_from_embeddings(tmp_path / "img.txt", tmp_path / "txt.txt")
    assert sim.tolist() == [[1.0, 0.0, 1.0], [0.0, 2.0, 1.0]]
    (tmp_path / "bad.txt").write_text("1 3\n1 1 1\n", encoding="utf-8")
    with pytest.raises(MatrixFormatError):
        retrieval.similarity_from_embeddings(tmp_path / "img.txt", tmp_path / "bad.txt")
