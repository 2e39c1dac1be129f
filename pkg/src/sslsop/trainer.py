"""Joint training of per-neighborhood structured predictors and missing outputs.

Each outer iteration runs three phases in a fixed order:

1. ``update_bounds`` -- for every neighborhood ``i`` and member ``j`` find the
   loss-augmented output ``z[i, j]`` under the current ``w_i`` and ``y_j``.
2. ``update_weights`` -- one subgradient step per neighborhood:
   ``w_i <- (1 - eta*C) w_i + (eta/k) sum_j [Phi(x_j, y_j) - Phi(x_j, z[i, j])]``.
3. ``update_outputs`` -- labeled points keep their given output, every
   unlabeled point takes the output minimizing
   ``sum_{i' : j in N_i'} (1/k) [loss(y, z[i', j]) - w_i'.Phi(x_j, y)]``.

Outputs, bounds and labels are carried around as candidate indices into the
canonical enumeration of the output space.
"""

from __future__ import annotations

import enum
import functools
import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from .neighborhood import NeighborhoodIndex, build_index
from .structured import (
    LossKind,
    OutputDescriptor,
    candidate_index,
    check_loss_kind,
    enumerate_outputs,
    feature_table,
    loss_matrix,
)

logger = logging.getLogger(__name__)

_CHUNK_ELEMENTS = 1 << 22


class TrainingDiverged(ArithmeticError):
    """A local weight vector became non-finite."""

    def __init__(self, iteration: int, point: int):
        super().__init__(
            f"weights of neighborhood {point} became non-finite at iteration "
            f"{iteration}; lower eta or C"
        )
        self.iteration = iteration
        self.point = point


class InitPolicy(str, enum.Enum):
    NEAREST_LABELED = "nearest_labeled"
    FIRST_CANDIDATE = "first_candidate"


@dataclass(frozen=True)
class TrainConfig:
    k: int = 10
    C: float = 0.1
    eta: float = 0.05
    T: int = 50
    seed: int = 0
    init_policy: InitPolicy = InitPolicy.NEAREST_LABELED

    def __post_init__(self):
        object.__setattr__(self, "init_policy", InitPolicy(self.init_policy))
        if int(self.k) < 1:
            raise ValueError(f"k must be a positive integer, got {self.k}")
        if not self.C >= 0:
            raise ValueError(f"C must be nonnegative, got {self.C}")
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if int(self.T) < 0:
            raise ValueError(f"T must be nonnegative, got {self.T}")
        if not self.eta * self.C < 1:
            raise ValueError(f"eta*C must be below 1 (got {self.eta * self.C:g})")

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "C": self.C,
            "eta": self.eta,
            "T": self.T,
            "seed": self.seed,
            "init_policy": self.init_policy.value,
        }


@dataclass
class DatasetSplit:
    """Training inputs plus the labeled subset ``{index: output}``."""

    X: np.ndarray
    labeled: dict
    desc: OutputDescriptor
    kind: LossKind = LossKind.ZERO_ONE

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim != 2 or self.X.shape[0] == 0:
            raise ValueError("X must be a non-empty 2-D array")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("X contains non-finite values")
        self.kind = check_loss_kind(self.kind, self.desc)
        n = self.X.shape[0]
        labeled = {}
        for i, y in self.labeled.items():
            i = int(i)
            if not 0 <= i < n:
                raise ValueError(f"labeled index {i} outside [0, {n})")
            labeled[i] = enumerate_outputs(self.desc)[candidate_index(self.desc, y)]
        self.labeled = dict(sorted(labeled.items()))
        if not self.labeled:
            raise ValueError("at least one labeled point is required")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def m(self) -> int:
        return self.desc.joint_dim(self.d)

    @functools.cached_property
    def features(self) -> np.ndarray:
        # Phi(x_j, y_c) for every point and candidate
        table = feature_table(self.desc, self.X)
        table.setflags(write=False)
        return table

    @functools.cached_property
    def losses(self) -> np.ndarray:
        return loss_matrix(self.kind, self.desc)

    @functools.cached_property
    def labeled_mask(self) -> np.ndarray:
        mask = np.zeros(self.n, dtype=bool)
        mask[list(self.labeled)] = True
        return mask

    @functools.cached_property
    def labeled_idx(self) -> np.ndarray:
        out = np.full(self.n, -1, dtype=np.intp)
        for i, y in self.labeled.items():
            out[i] = candidate_index(self.desc, y)
        return out


@dataclass
class ModelParams:
    """One local weight vector per training point, rows of ``w``."""

    w: np.ndarray
    desc: OutputDescriptor
    kind: LossKind
    k: int

    @property
    def n(self) -> int:
        return self.w.shape[0]

    @property
    def m(self) -> int:
        return self.w.shape[1]


class IterationRecord(NamedTuple):
    iteration: int
    objective: float
    outputs_changed: int


@dataclass
class TrainState:
    """Current outputs, bound parameters and traces.

    ``y_idx[j]`` is the candidate index of ``y_j``; ``z[i, r]`` is the
    candidate index of the bound output for member ``index.members[i, r]``.
    """

    y_idx: np.ndarray
    labeled_mask: np.ndarray
    desc: OutputDescriptor
    z: Optional[np.ndarray] = None
    iteration: int = 0
    log: list = field(default_factory=list)

    @property
    def y(self) -> list:
        cands = enumerate_outputs(self.desc)
        return [cands[c] for c in self.y_idx]

    @property
    def objective_trace(self) -> list:
        return [rec.objective for rec in self.log]

    def bound_output(self, index: NeighborhoodIndex, i: int, j: int):
        if self.z is None:
            raise ValueError("bounds have not been computed yet")
        (r,) = np.flatnonzero(index.members[i] == j)
        return enumerate_outputs(self.desc)[self.z[i, r]]


def init_state(data: DatasetSplit, index: NeighborhoodIndex, cfg: TrainConfig):
    if index.k != cfg.k or index.n != data.n:
        raise ValueError("neighborhood index does not match data and config")
    w = np.zeros((data.n, data.m))
    y_idx = data.labeled_idx.copy()
    unlabeled = np.flatnonzero(~data.labeled_mask)
    if unlabeled.size:
        if cfg.init_policy is InitPolicy.FIRST_CANDIDATE:
            y_idx[unlabeled] = 0
        else:
            anchors = np.flatnonzero(data.labeled_mask)
            diff = data.X[unlabeled, None, :] - data.X[None, anchors, :]
            dist = np.einsum("uld,uld->ul", diff, diff)
            nearest = anchors[np.argmin(dist, axis=1)]
            y_idx[unlabeled] = y_idx[nearest]
    params = ModelParams(w=w, desc=data.desc, kind=data.kind, k=cfg.k)
    state = TrainState(y_idx=y_idx, labeled_mask=data.labeled_mask.copy(), desc=data.desc)
    return params, state


def member_scores(w: np.ndarray, data: DatasetSplit, index: NeighborhoodIndex) -> np.ndarray:
    """``S[i, r, c] = w_i . Phi(x_j, y_c)`` for ``j = members[i, r]``."""
    table = data.features
    n, k = index.members.shape
    n_cand, m = table.shape[1:]
    out = np.empty((n, k, n_cand))
    step = max(1, _CHUNK_ELEMENTS // (k * n_cand * m))
    for s in range(0, n, step):
        block = index.members[s:s + step]
        out[s:s + step] = np.einsum("ircm,im->irc", table[block], w[s:s + step])
    return out


def update_bounds(params: ModelParams, state: TrainState, data: DatasetSplit,
                  index: NeighborhoodIndex) -> np.ndarray:
    """Loss-augmented argmax for every (neighborhood, member) pair."""
    scores = member_scores(params.w, data, index)
    y_mem = state.y_idx[index.members]
    true_scores = np.take_along_axis(scores, y_mem[..., None], axis=2)
    values = (scores - true_scores) + data.losses[y_mem]
    return np.argmax(values, axis=2)


def _feature_gaps(state: TrainState, data: DatasetSplit, index: NeighborhoodIndex):
    # Phi(x_j, y_j) - Phi(x_j, z[i, j]), members reordered by ascending index so
    # that every neighborhood sums its terms in the same order
    members, order = index.members_by_index
    z = np.take_along_axis(state.z, order, axis=1)
    table = data.features
    return table[members, state.y_idx[members]] - table[members, z]


def neighborhood_sums(state: TrainState, data: DatasetSplit, index: NeighborhoodIndex):
    """``sum_j [Phi(x_j, y_j) - Phi(x_j, z[i, j])]`` per neighborhood, shape ``(n, m)``."""
    return _feature_gaps(state, data, index).sum(axis=1)


def update_weights(params: ModelParams, state: TrainState, data: DatasetSplit,
                   index: NeighborhoodIndex, cfg: TrainConfig) -> np.ndarray:
    """One damped subgradient step for each local predictor."""
    if state.z is None:
        raise ValueError("bounds must be updated before weights")
    gaps = neighborhood_sums(state, data, index)
    return (1.0 - cfg.eta * cfg.C) * params.w + (cfg.eta / index.k) * gaps


def output_costs(params: ModelParams, state: TrainState, data: DatasetSplit,
                 index: NeighborhoodIndex) -> np.ndarray:
    """Per-point, per-candidate cost minimized by the output update."""
    scores = member_scores(params.w, data, index)
    # losses[c, z] laid out as [pair, c]
    terms = (data.losses.T[state.z] - scores) / index.k
    n_cand = scores.shape[2]
    targets = index.members.ravel()
    flat = terms.reshape(-1, n_cand)
    cost = np.empty((data.n, n_cand))
    # bincount accumulates in pair order, i.e. ascending neighborhood index
    for c in range(n_cand):
        cost[:, c] = np.bincount(targets, weights=flat[:, c], minlength=data.n)
    return cost


def update_outputs(params: ModelParams, state: TrainState, data: DatasetSplit,
                   index: NeighborhoodIndex) -> np.ndarray:
    """Reassign the outputs of unlabeled points; labeled points keep theirs.

    The cost of each point depends only on the fixed ``w`` and ``z``, never on
    other points' outputs, so solving all points at once gives the same
    result as solving them one by one in index order.
    """
    if state.z is None:
        raise ValueError("bounds must be updated before outputs")
    cost = output_costs(params, state, data, index)
    y_new = np.argmin(cost, axis=1)
    return np.where(data.labeled_mask, data.labeled_idx, y_new)


def _bound_terms(w, state, data, index):
    table = data.features
    members = index.members
    phi_z = table[members, state.z]
    phi_y = table[members, state.y_idx[members]]
    gap = np.einsum("irm,im->ir", phi_z - phi_y, w)
    return gap + data.losses[state.y_idx[members], state.z]


def objective(params: ModelParams, state: TrainState, data: DatasetSplit,
              index: NeighborhoodIndex, C: float) -> float:
    """Combined bound objective evaluated with the current ``z``."""
    if state.z is None:
        raise ValueError("bounds must be updated before evaluating the objective")
    per_hood = _bound_terms(params.w, state, data, index).sum(axis=1) / index.k
    reg = 0.5 * C * np.einsum("im,im->i", params.w, params.w)
    return float(np.sum(per_hood + reg))


def local_objective(w_i, i: int, state: TrainState, data: DatasetSplit,
                    index: NeighborhoodIndex, C: float) -> float:
    """Objective of neighborhood ``i`` as a function of its weights, with ``z`` and ``y`` frozen."""
    w_i = np.asarray(w_i, dtype=float)
    table = data.features
    members = index.members[i]
    z = state.z[i]
    y = state.y_idx[members]
    gap = (table[members, z] - table[members, y]) @ w_i + data.losses[y, z]
    return float(gap.sum() / index.k + 0.5 * C * (w_i @ w_i))


def local_subgradient(w_i, i: int, state: TrainState, data: DatasetSplit,
                      index: NeighborhoodIndex, C: float) -> np.ndarray:
    w_i = np.asarray(w_i, dtype=float)
    table = data.features
    members = index.members[i]
    y = state.y_idx[members]
    diff = table[members, state.z[i]] - table[members, y]
    return diff.sum(axis=0) / index.k + C * w_i


PhaseHook = Callable[[str, ModelParams, TrainState], None]


def train(data: DatasetSplit, cfg: TrainConfig, *,
          index: NeighborhoodIndex | None = None,
          on_phase: PhaseHook | None = None,
          on_iteration: Callable[[IterationRecord], None] | None = None):
    """Run initialization followed by ``cfg.T`` bound/weight/output iterations.

    ``on_phase(name, params, state)`` fires after every phase (names
    ``"init"``, ``"bounds"``, ``"weights"``, ``"outputs"``) and
    ``on_iteration`` receives one :class:`IterationRecord` per iteration.
    Raises :class:`TrainingDiverged` if any weight becomes non-finite.
    """
    if cfg.k > data.n:
        raise ValueError(f"k={cfg.k} exceeds the number of training points {data.n}")
    if index is None:
        index = build_index(data.X, cfg.k)
    enumerate_outputs(data.desc)  # fail fast on oversized spaces
    params, state = init_state(data, index, cfg)

    def notify(phase):
        if on_phase is not None:
            on_phase(phase, params, state)

    notify("init")
    for t in range(1, cfg.T + 1):
        state.z = update_bounds(params, state, data, index)
        notify("bounds")

        params.w = update_weights(params, state, data, index, cfg)
        bad = ~np.all(np.isfinite(params.w), axis=1)
        if bad.any():
            raise TrainingDiverged(t, int(np.flatnonzero(bad)[0]))
        notify("weights")

        y_new = update_outputs(params, state, data, index)
        changed = int(np.count_nonzero(y_new != state.y_idx))
        state.y_idx = y_new
        state.iteration = t
        notify("outputs")

        rec = IterationRecord(t, objective(params, state, data, index, cfg.C), changed)
        state.log.append(rec)
        logger.debug("iteration %d objective %.6g changed %d", *rec)
        if on_iteration is not None:
            on_iteration(rec)
    return params, state
