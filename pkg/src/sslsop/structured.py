"""Output spaces, joint feature maps, structured losses and argmax scans.

Three output families are supported:

* ``Multiclass(K)`` -- one of ``K`` classes, payload ``int`` in ``[0, K)``.
* ``TreeLeaf(parent)`` -- a leaf of a rooted label tree, payload is the leaf's
  node id.  Each output is coded as the indicator of the leaf and all of its
  ancestors.
* ``TagSequence(T, L)`` -- a length-``L`` tuple of tags in ``[0, T)``.

Every argmax/argmin in this package is a brute-force scan over the canonical
candidate enumeration, breaking ties towards the first candidate.
"""

from __future__ import annotations

import enum
import functools
import itertools
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

DEFAULT_ENUMERATION_CAP = 65536

Output = Union[int, tuple]


class SpaceTooLarge(ValueError):
    """Raised when an output space has more candidates than its cap allows."""

    def __init__(self, size: int, cap: int):
        super().__init__(
            f"output space has {size} candidates, enumeration cap is {cap}; "
            "shrink the space or raise enumeration_cap"
        )
        self.size = size
        self.cap = cap


class LossKind(str, enum.Enum):
    ZERO_ONE = "zero_one"
    TREE_ANCESTOR_HEIGHT = "tree_ancestor_height"
    HAMMING = "hamming"


@dataclass(frozen=True)
class Multiclass:
    K: int
    enumeration_cap: int = DEFAULT_ENUMERATION_CAP

    def __post_init__(self):
        if int(self.K) < 2:
            raise ValueError(f"Multiclass needs K >= 2, got {self.K}")
        if self.enumeration_cap < 1:
            raise ValueError("enumeration_cap must be positive")

    @property
    def size(self) -> int:
        return self.K

    @property
    def code_length(self) -> int:
        return self.K

    def joint_dim(self, d: int) -> int:
        return d * self.K


@dataclass(frozen=True)
class TreeLeaf:
    """Leaves of a rooted tree given by its parent array (``-1`` marks the root).

    ``leaves`` defaults to every childless node; when given it must list
    childless nodes only and is kept in ascending id order.
    """

    parent: tuple
    leaves: tuple = None
    enumeration_cap: int = DEFAULT_ENUMERATION_CAP
    _heights: tuple = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        parent = tuple(int(p) for p in self.parent)
        kappa = len(parent)
        if kappa == 0:
            raise ValueError("tree must have at least one node")
        roots = [v for v, p in enumerate(parent) if p == -1]
        if len(roots) != 1:
            raise ValueError(f"tree must have exactly one root, found {len(roots)}")
        for v, p in enumerate(parent):
            if p != -1 and not 0 <= p < kappa:
                raise ValueError(f"node {v} has out-of-range parent {p}")
        # every node must reach the root within kappa steps
        for v in range(kappa):
            u, steps = v, 0
            while parent[u] != -1:
                u = parent[u]
                steps += 1
                if steps > kappa:
                    raise ValueError(f"parent array has a cycle through node {v}")
        has_child = [False] * kappa
        for p in parent:
            if p != -1:
                has_child[p] = True
        if self.leaves is None:
            leaves = tuple(v for v in range(kappa) if not has_child[v])
        else:
            leaves = tuple(sorted(int(v) for v in self.leaves))
            if len(set(leaves)) != len(leaves):
                raise ValueError("duplicate leaf ids")
            for v in leaves:
                if not 0 <= v < kappa or has_child[v]:
                    raise ValueError(f"node {v} is not a leaf of the tree")
        if not leaves:
            raise ValueError("tree has no leaves")
        if self.enumeration_cap < 1:
            raise ValueError("enumeration_cap must be positive")
        heights = [0] * kappa
        # a node's height is settled once all descendants have been relaxed
        for v in range(kappa):
            u, h = v, 0
            while parent[u] != -1:
                u = parent[u]
                h += 1
                heights[u] = max(heights[u], h)
        object.__setattr__(self, "parent", parent)
        object.__setattr__(self, "leaves", leaves)
        object.__setattr__(self, "_heights", tuple(heights))

    @property
    def kappa(self) -> int:
        return len(self.parent)

    @property
    def size(self) -> int:
        return len(self.leaves)

    @property
    def code_length(self) -> int:
        return self.kappa

    def joint_dim(self, d: int) -> int:
        return d * self.kappa

    def ancestors(self, node: int) -> list:
        """``node`` followed by its ancestors up to the root."""
        chain = [node]
        while self.parent[chain[-1]] != -1:
            chain.append(self.parent[chain[-1]])
        return chain

    def height(self, node: int) -> int:
        return self._heights[node]

    def lca(self, a: int, b: int) -> int:
        above_a = set(self.ancestors(a))
        for u in self.ancestors(b):
            if u in above_a:
                return u
        raise AssertionError("nodes share no ancestor")  # unreachable for valid trees


@dataclass(frozen=True)
class TagSequence:
    T: int
    L: int
    enumeration_cap: int = DEFAULT_ENUMERATION_CAP

    def __post_init__(self):
        if self.T < 2:
            raise ValueError(f"TagSequence needs T >= 2, got {self.T}")
        if self.L < 1:
            raise ValueError(f"TagSequence needs L >= 1, got {self.L}")
        if self.enumeration_cap < 1:
            raise ValueError("enumeration_cap must be positive")

    @property
    def size(self) -> int:
        return self.T ** self.L

    def joint_dim(self, d: int) -> int:
        if d % self.L:
            raise ValueError(f"feature length {d} is not divisible by sequence length {self.L}")
        return self.T * self.T + self.T * (d // self.L)


OutputDescriptor = Union[Multiclass, TreeLeaf, TagSequence]


# ---------------------------------------------------------------------------
# enumeration


@functools.lru_cache(maxsize=64)
def _enumerate(desc: OutputDescriptor) -> tuple:
    if isinstance(desc, Multiclass):
        return tuple(range(desc.K))
    if isinstance(desc, TreeLeaf):
        return desc.leaves
    return tuple(itertools.product(range(desc.T), repeat=desc.L))


def enumerate_outputs(desc: OutputDescriptor) -> list:
    """All outputs of ``desc`` in canonical order.

    Multiclass and tree leaves ascend by id; tag sequences are lexicographic.
    Raises :class:`SpaceTooLarge` when the space exceeds ``desc.enumeration_cap``.
    """
    if desc.size > desc.enumeration_cap:
        raise SpaceTooLarge(desc.size, desc.enumeration_cap)
    return list(_enumerate(desc))


@functools.lru_cache(maxsize=64)
def _index_map(desc: OutputDescriptor) -> dict:
    return {y: c for c, y in enumerate(_enumerate(desc))}


def normalize_output(desc: OutputDescriptor, y) -> Output:
    """Validate ``y`` against ``desc`` and return its canonical payload."""
    if isinstance(desc, TagSequence):
        try:
            tags = tuple(int(t) for t in y)
        except TypeError:
            raise ValueError(f"tag sequence output must be a sequence, got {y!r}") from None
        if len(tags) != desc.L:
            raise ValueError(f"tag sequence must have length {desc.L}, got {len(tags)}")
        if any(not 0 <= t < desc.T for t in tags) or any(
            isinstance(t, bool) for t in y
        ):
            raise ValueError(f"tags must lie in [0, {desc.T}), got {list(y)}")
        return tags
    if isinstance(y, (bool, np.bool_)) or not isinstance(y, (int, np.integer)):
        raise ValueError(f"expected an integer output, got {y!r}")
    y = int(y)
    if isinstance(desc, Multiclass):
        if not 0 <= y < desc.K:
            raise ValueError(f"class index {y} outside [0, {desc.K})")
        return y
    if y not in desc.leaves:
        raise ValueError(f"node {y} is not a leaf of the output tree")
    return y


def candidate_index(desc: OutputDescriptor, y) -> int:
    """Position of ``y`` in the canonical enumeration."""
    return _index_map(desc)[normalize_output(desc, y)]


# ---------------------------------------------------------------------------
# joint features


def encode_output(desc: OutputDescriptor, y) -> np.ndarray:
    """Binary coding of ``y``: one-hot for classes, ancestor closure for tree leaves."""
    if isinstance(desc, TagSequence):
        raise ValueError("tag sequences have no indicator coding; use joint_feature")
    y = normalize_output(desc, y)
    e = np.zeros(desc.code_length)
    if isinstance(desc, Multiclass):
        e[y] = 1.0
    else:
        e[desc.ancestors(y)] = 1.0
    return e


@functools.lru_cache(maxsize=64)
def _code_matrix(desc: OutputDescriptor) -> np.ndarray:
    codes = np.stack([encode_output(desc, y) for y in enumerate_outputs(desc)])
    codes.setflags(write=False)
    return codes


@functools.lru_cache(maxsize=64)
def _sequence_tables(desc: TagSequence):
    cands = np.array(enumerate_outputs(desc), dtype=np.intp).reshape(-1, desc.L)
    n_cand = cands.shape[0]
    trans = np.zeros((n_cand, desc.T * desc.T))
    for p in range(desc.L - 1):
        np.add.at(trans, (np.arange(n_cand), cands[:, p] * desc.T + cands[:, p + 1]), 1.0)
    # onehot[c, p, t] = 1 iff candidate c carries tag t at position p
    onehot = np.zeros((n_cand, desc.L, desc.T))
    onehot[np.arange(n_cand)[:, None], np.arange(desc.L)[None, :], cands] = 1.0
    trans.setflags(write=False)
    onehot.setflags(write=False)
    return trans, onehot


def _as_features(x, d: int | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("feature vector must be one-dimensional")
    if d is not None and x.shape[0] != d:
        raise ValueError(f"feature vector has length {x.shape[0]}, expected {d}")
    if not np.all(np.isfinite(x)):
        raise ValueError("feature vector contains non-finite values")
    return x


def _segments(desc: TagSequence, X: np.ndarray) -> np.ndarray:
    d = X.shape[-1]
    if d % desc.L:
        raise ValueError(f"feature length {d} is not divisible by sequence length {desc.L}")
    return X.reshape(X.shape[:-1] + (desc.L, d // desc.L))


def joint_feature(desc: OutputDescriptor, x, y) -> np.ndarray:
    """Joint representation of an input ``x`` and an output ``y``.

    Class and tree outputs use the tensor product of ``x`` with the output
    coding, laid out in output-major blocks: ``phi[b*d + f] = e[b] * x[f]``.

    Tag sequences concatenate a ``T*T`` bigram-count block (entry ``t*T + u``
    counts transitions ``t -> u``) with ``T`` emission blocks; block ``t``
    sums the per-position segments of ``x`` tagged ``t``.  ``x`` is read as
    ``L`` contiguous segments, so its length must be divisible by ``L``.
    """
    x = _as_features(x)
    y = normalize_output(desc, y)
    if isinstance(desc, TagSequence):
        seg = _segments(desc, x)
        trans = np.zeros(desc.T * desc.T)
        for a, b in zip(y[:-1], y[1:]):
            trans[a * desc.T + b] += 1.0
        emit = np.zeros((desc.T, seg.shape[1]))
        for p, t in enumerate(y):
            emit[t] += seg[p]
        return np.concatenate([trans, emit.ravel()])
    return np.outer(encode_output(desc, y), x).ravel()


def feature_table(desc: OutputDescriptor, X) -> np.ndarray:
    """``Phi(x_j, y_c)`` for every row of ``X`` and every candidate, shape ``(n, |Y|, m)``."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a 2-D array")
    n, d = X.shape
    if isinstance(desc, TagSequence):
        trans, onehot = _sequence_tables(desc)
        seg = _segments(desc, X)
        emit = np.einsum("cpt,nps->ncts", onehot, seg).reshape(n, trans.shape[0], -1)
        trans_block = np.broadcast_to(trans, (n,) + trans.shape)
        return np.concatenate([trans_block, emit], axis=2)
    codes = _code_matrix(desc)
    return np.einsum("cb,nf->ncbf", codes, X).reshape(n, codes.shape[0], -1)


# ---------------------------------------------------------------------------
# losses


def check_loss_kind(kind: LossKind, desc: OutputDescriptor) -> LossKind:
    kind = LossKind(kind)
    if kind is LossKind.TREE_ANCESTOR_HEIGHT and not isinstance(desc, TreeLeaf):
        raise ValueError("tree_ancestor_height loss needs a TreeLeaf output space")
    if kind is LossKind.HAMMING and not isinstance(desc, TagSequence):
        raise ValueError("hamming loss needs a TagSequence output space")
    return kind


def loss(kind: LossKind, desc: OutputDescriptor, y, y2) -> float:
    kind = check_loss_kind(kind, desc)
    y = normalize_output(desc, y)
    y2 = normalize_output(desc, y2)
    if y == y2:
        return 0.0
    if kind is LossKind.ZERO_ONE:
        return 1.0
    if kind is LossKind.HAMMING:
        return sum(a != b for a, b in zip(y, y2)) / desc.L
    return float(desc.height(desc.lca(y, y2)))


@functools.lru_cache(maxsize=64)
def _loss_matrix(kind: LossKind, desc: OutputDescriptor) -> np.ndarray:
    cands = enumerate_outputs(desc)
    mat = np.array([[loss(kind, desc, a, b) for b in cands] for a in cands])
    mat.setflags(write=False)
    return mat


def loss_matrix(kind: LossKind, desc: OutputDescriptor) -> np.ndarray:
    """``M[a, b] = loss(y_a, y_b)`` over canonical candidate indices."""
    return _loss_matrix(check_loss_kind(kind, desc), desc)


def max_loss(kind: LossKind, desc: OutputDescriptor) -> float:
    kind = check_loss_kind(kind, desc)
    if kind is LossKind.TREE_ANCESTOR_HEIGHT:
        return float(max(desc.height(v) for v in range(desc.kappa)))
    return 1.0


# ---------------------------------------------------------------------------
# scoring and inference


def score(w, phi) -> float:
    w = np.asarray(w, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if w.shape != phi.shape or w.ndim != 1:
        raise ValueError(f"weight length {w.shape} does not match joint feature {phi.shape}")
    return float(w @ phi)


def _candidate_scores(w, desc: OutputDescriptor, x) -> np.ndarray:
    x = _as_features(x)
    w = np.asarray(w, dtype=float)
    if w.shape != (desc.joint_dim(x.shape[0]),):
        raise ValueError(
            f"weight length {w.shape[0] if w.ndim == 1 else w.shape} does not match "
            f"joint dimension {desc.joint_dim(x.shape[0])}"
        )
    enumerate_outputs(desc)  # enforce the cap before building tables
    return feature_table(desc, x[None, :])[0] @ w


def argmax_output(w, desc: OutputDescriptor, x) -> Output:
    """Highest-scoring output under ``w``; the first maximal candidate wins ties."""
    scores = _candidate_scores(w, desc, x)
    return enumerate_outputs(desc)[int(np.argmax(scores))]


def loss_aug_argmax(w, desc: OutputDescriptor, kind: LossKind, x, y):
    """Most violating output for the pair ``(x, y)``.

    Maximizes ``w.(Phi(x, y') - Phi(x, y)) + loss(y, y')`` over ``y'`` and
    returns ``(z, bound)``.  The bound is nonnegative and upper-bounds the
    loss of :func:`argmax_output`'s prediction against ``y``.
    """
    c_true = candidate_index(desc, y)
    scores = _candidate_scores(w, desc, x)
    values = (scores - scores[c_true]) + loss_matrix(kind, desc)[c_true]
    best = int(np.argmax(values))
    return enumerate_outputs(desc)[best], float(values[best])
