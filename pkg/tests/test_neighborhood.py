import numpy as np
import pytest

from sslsop.neighborhood import build_index, neighbors_of_query

from oracle import knn_lists


def test_hand_example():
    # pairwise distances: |0-1| = 1, |0-10| = 10, |1-10| = 9
    idx = build_index([[0.0], [1.0], [10.0]], 2)
    assert idx.members.tolist() == [[0, 1], [1, 0], [2, 1]]
    assert [list(v) for v in idx.inverted] == [[0, 1], [0, 1, 2], [2]]


def test_k1_is_self():
    X = np.random.default_rng(0).standard_normal((7, 3))
    idx = build_index(X, 1)
    assert idx.members.ravel().tolist() == list(range(7))
    assert [list(v) for v in idx.inverted] == [[j] for j in range(7)]


def test_k_equals_n():
    X = np.random.default_rng(1).standard_normal((6, 2))
    idx = build_index(X, 6)
    for i in range(6):
        assert sorted(idx.members[i]) == list(range(6))
        assert list(idx.inverted[i]) == list(range(6))


def test_duplicates_keep_self_first_then_index_order():
    X = [[1.0], [1.0], [1.0], [5.0]]
    idx = build_index(X, 3)
    assert idx.members.tolist() == [[0, 1, 2], [1, 0, 2], [2, 0, 1], [3, 0, 1]]


def test_errors():
    with pytest.raises(ValueError):
        build_index([[0.0], [1.0]], 3)
    with pytest.raises(ValueError):
        build_index(np.empty((0, 2)), 1)
    with pytest.raises(ValueError):
        build_index([[0.0], [1.0]], 0)
    with pytest.raises(ValueError):
        neighbors_of_query([[0.0], [1.0]], [0.0, 1.0], 1)
    with pytest.raises(ValueError):
        neighbors_of_query([[0.0], [1.0]], [0.0], 3)


@pytest.mark.parametrize("seed", range(5))
def test_against_sorting_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 200))
    k = int(rng.integers(1, n + 1))
    # a coarse grid forces plenty of distance ties
    X = rng.integers(0, 4, size=(n, 2)).astype(float)
    idx = build_index(X, k)
    assert idx.members.tolist() == knn_lists(X.tolist(), k)
    for i in range(n):
        d = ((X[idx.members[i]] - X[i]) ** 2).sum(axis=1)
        assert (np.diff(d) >= 0).all()
    # exhaustive round trip of the inverted index
    for i in range(n):
        for j in range(n):
            assert (j in idx.members[i]) == (i in idx.inverted[j])
    assert all(len(v) >= 1 for v in idx.inverted)


def test_permutation_equivariance():
    rng = np.random.default_rng(9)
    X = rng.standard_normal((30, 3))
    perm = rng.permutation(30)
    a = build_index(X, 5)
    b = build_index(X[perm], 5)
    # b's point p is a's point perm[p]
    for p in range(30):
        assert perm[b.members[p]].tolist() == a.members[perm[p]].tolist()


def test_query_neighbors():
    X = [[0.0], [2.0], [5.0]]
    assert neighbors_of_query(X, [5.0], 2) == [2, 1]
    assert neighbors_of_query(X, [1.0], 1) == [0]  # equidistant to 0 and 2 -> lower index
    assert neighbors_of_query([[0.0], [2.0]], [0.9], 1) == [0]
