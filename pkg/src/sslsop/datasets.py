"""Dataset container and seeded synthetic generators."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .structured import (
    LossKind,
    Multiclass,
    OutputDescriptor,
    TagSequence,
    TreeLeaf,
    check_loss_kind,
    normalize_output,
)
from .trainer import DatasetSplit

FAMILIES = ("multiclass", "tree", "sequence")

# root 0; internal nodes 1-3; two leaves under each internal node
SYNTH_TREE_PARENT = (-1, 0, 0, 0, 1, 1, 2, 2, 3, 3)
SYNTH_SEQ_TAGS = 3
SYNTH_SEQ_LENGTH = 4


@dataclass
class Dataset:
    """Inputs with optional outputs (``None`` marks an unlabeled point)."""

    X: np.ndarray
    outputs: list
    desc: OutputDescriptor
    kind: LossKind = LossKind.ZERO_ONE
    ids: Optional[list] = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim != 2:
            raise ValueError("X must be a 2-D array")
        if len(self.outputs) != self.X.shape[0]:
            raise ValueError("outputs and X disagree on the number of points")
        self.kind = check_loss_kind(self.kind, self.desc)
        self.outputs = [None if y is None else normalize_output(self.desc, y)
                        for y in self.outputs]
        if self.ids is None:
            self.ids = [str(i) for i in range(self.X.shape[0])]
        if len(self.ids) != self.X.shape[0]:
            raise ValueError("ids and X disagree on the number of points")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def fully_labeled(self) -> bool:
        return all(y is not None for y in self.outputs)

    def split(self, rows, labeled_rows) -> DatasetSplit:
        """Training split over ``rows`` keeping outputs only for ``labeled_rows``.

        Indices inside the split are positions within ``rows``.
        """
        rows = np.asarray(rows, dtype=np.intp)
        keep = set(int(r) for r in labeled_rows)
        labeled = {}
        for pos, r in enumerate(rows):
            if int(r) in keep:
                if self.outputs[r] is None:
                    raise ValueError(f"point {self.ids[r]} has no output to keep")
                labeled[pos] = self.outputs[r]
        return DatasetSplit(X=self.X[rows], labeled=labeled, desc=self.desc, kind=self.kind)


@dataclass(frozen=True)
class SyntheticSpec:
    family: str
    n: int
    d: int = 2
    modes: int = 1
    noise: float = 0.1
    seed: int = 0
    classes: int = 2

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {', '.join(FAMILIES)}; got {self.family!r}")
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.modes < 1:
            raise ValueError("modes must be positive")
        if self.noise < 0:
            raise ValueError("noise must be nonnegative")
        if self.family == "multiclass" and self.classes < 2:
            raise ValueError("classes must be at least 2")
        if self.family in ("multiclass", "tree") and self.d < 2:
            raise ValueError(f"{self.family} generator needs d >= 2")
        if self.family == "sequence" and (self.d < 1 or self.d % SYNTH_SEQ_LENGTH):
            raise ValueError(f"sequence generator needs d divisible by {SYNTH_SEQ_LENGTH}")


def _circle(count: int, d: int) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(count) / count
    centers = np.zeros((count, d))
    centers[:, 0] = np.cos(angles)
    centers[:, 1] = np.sin(angles)
    return centers


def _multiclass(spec: SyntheticSpec, rng: np.random.Generator) -> Dataset:
    # K*modes unit-circle clusters dealt to classes round-robin; with two
    # modes per class, opposite clusters share a class (an XOR layout)
    K = spec.classes
    centers = _circle(K * spec.modes, spec.d)
    labels = rng.integers(K, size=spec.n)
    mode = rng.integers(spec.modes, size=spec.n)
    X = centers[mode * K + labels] + spec.noise * rng.standard_normal((spec.n, spec.d))
    return Dataset(X, labels.tolist(), Multiclass(K), LossKind.ZERO_ONE)


def _tree(spec: SyntheticSpec, rng: np.random.Generator) -> Dataset:
    desc = TreeLeaf(SYNTH_TREE_PARENT)
    leaves = np.array(desc.leaves)
    # siblings get neighboring clusters on the circle
    centers = _circle(len(leaves), spec.d)
    which = rng.integers(len(leaves), size=spec.n)
    X = centers[which] + spec.noise * rng.standard_normal((spec.n, spec.d))
    return Dataset(X, leaves[which].tolist(), desc, LossKind.TREE_ANCESTOR_HEIGHT)


def _sequence(spec: SyntheticSpec, rng: np.random.Generator) -> Dataset:
    T, L = SYNTH_SEQ_TAGS, SYNTH_SEQ_LENGTH
    s = spec.d // L
    if s >= T:
        means = np.eye(T, s)
    elif s >= 2:
        means = _circle(T, s)
    else:
        means = np.linspace(-1.0, 1.0, T)[:, None]
    trans = np.full((T, T), 0.4 / (T - 1))
    np.fill_diagonal(trans, 0.6)
    tags = np.empty((spec.n, L), dtype=np.intp)
    tags[:, 0] = rng.integers(T, size=spec.n)
    for p in range(1, L):
        u = rng.random(spec.n)
        cdf = np.cumsum(trans[tags[:, p - 1]], axis=1)
        tags[:, p] = np.minimum((u[:, None] >= cdf).sum(axis=1), T - 1)
    X = means[tags] + spec.noise * rng.standard_normal((spec.n, L, s))
    outputs = [tuple(row) for row in tags.tolist()]
    return Dataset(X.reshape(spec.n, L * s), outputs, TagSequence(T, L), LossKind.ZERO_ONE)


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Seeded stand-in dataset for one of the three output families."""
    rng = np.random.default_rng(spec.seed)
    if spec.family == "multiclass":
        return _multiclass(spec, rng)
    if spec.family == "tree":
        return _tree(spec, rng)
    return _sequence(spec, rng)
