"""Exact k-nearest-neighbor structure over the training inputs."""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

_CHUNK_ELEMENTS = 1 << 22


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a 2-D array of feature vectors")
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    return X


def _sq_distances(X: np.ndarray, Q: np.ndarray) -> np.ndarray:
    # direct differences rather than the |a|^2 + |b|^2 - 2ab expansion, so
    # exact duplicates come out at exactly zero and ties stay ties
    n, d = X.shape
    out = np.empty((Q.shape[0], n))
    step = max(1, _CHUNK_ELEMENTS // max(1, n * d))
    for start in range(0, Q.shape[0], step):
        diff = Q[start:start + step, None, :] - X[None, :, :]
        out[start:start + step] = np.einsum("qnd,qnd->qn", diff, diff)
    return out


def _rank(dist: np.ndarray, k: int) -> np.ndarray:
    # stable sort keeps ascending index among equal distances
    return np.argsort(dist, axis=1, kind="stable")[:, :k]


@dataclass(frozen=True)
class NeighborhoodIndex:
    """Neighborhood members and the inverted membership lists.

    ``members[i]`` holds the ``k`` indices nearest to ``x_i`` (``i`` itself
    first), ordered by distance then index.  ``inverted[j]`` lists, in
    ascending order, every ``i`` whose neighborhood contains ``j``.
    """

    members: np.ndarray
    inverted: tuple
    k: int
    n: int

    @functools.cached_property
    def members_by_index(self) -> tuple:
        """Members re-sorted by ascending index, with the permutation applied per row."""
        order = np.argsort(self.members, axis=1, kind="stable")
        return np.take_along_axis(self.members, order, axis=1), order

    def neighbors(self, i: int) -> list:
        return self.members[i].tolist()

    def containing(self, j: int) -> list:
        return list(self.inverted[j])


def build_index(X, k: int) -> NeighborhoodIndex:
    X = _as_matrix(X)
    n = X.shape[0]
    k = int(k)
    if not 1 <= k <= n:
        raise ValueError(f"neighborhood size k={k} must lie in [1, n={n}]")
    dist = _sq_distances(X, X)
    # self ranks first even when exact duplicates sit at distance zero
    dist[np.arange(n), np.arange(n)] = -1.0
    members = _rank(dist, k)
    members.setflags(write=False)
    inverted = [[] for _ in range(n)]
    for i in range(n):
        for j in members[i]:
            inverted[j].append(i)
    return NeighborhoodIndex(
        members=members, inverted=tuple(tuple(v) for v in inverted), k=k, n=n
    )


def neighbors_of_query(X, q, k: int) -> list:
    """The ``k`` training indices closest to ``q``, by (distance, index)."""
    return neighbors_of_queries(X, np.asarray(q, dtype=float)[None, :], k)[0].tolist()


def neighbors_of_queries(X, Q, k: int) -> np.ndarray:
    X = _as_matrix(X)
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[1] != X.shape[1]:
        raise ValueError(
            f"query dimension {Q.shape[-1] if Q.ndim else 0} does not match "
            f"training dimension {X.shape[1]}"
        )
    k = int(k)
    if not 1 <= k <= X.shape[0]:
        raise ValueError(f"k={k} must lie in [1, n={X.shape[0]}]")
    if Q.shape[0] == 0:
        return np.empty((0, k), dtype=np.intp)
    return _rank(_sq_distances(X, Q), k)
