"""Cross-validated evaluation, the global baseline, parameter sweeps and timing."""

from __future__ import annotations

import math
import time
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .datasets import Dataset
from .inference import predict_batch
from .structured import LossKind, OutputDescriptor, check_loss_kind, loss
from .trainer import TrainConfig, train


class FoldFailed(RuntimeError):
    def __init__(self, fold: int, error: Exception):
        super().__init__(f"fold {fold}: {error}")
        self.fold = fold
        self.error = error


@dataclass(frozen=True)
class CvPlan:
    fold_assignment: np.ndarray
    folds: int
    seed: int

    def test_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_assignment == fold)

    def train_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_assignment != fold)


@dataclass(frozen=True)
class Protocol:
    folds: int = 10
    labeled_fraction: float = 0.3
    seed: int = 0


@dataclass
class ExperimentReport:
    method: str
    per_fold_loss: list
    per_fold_train_seconds: list
    config: dict
    models: list = field(default_factory=list, repr=False)

    @property
    def mean_loss(self) -> float:
        return float(np.mean(self.per_fold_loss))

    @property
    def std_loss(self) -> float:
        return float(np.std(self.per_fold_loss))


class SweepRow(NamedTuple):
    param_value: float
    mean_loss: float
    std_loss: float


def make_cv_plan(n: int, folds: int = 10, seed: int = 0) -> CvPlan:
    """Seeded random partition of ``range(n)`` into near-equal folds."""
    if folds < 1 or folds > n:
        raise ValueError(f"cannot split {n} points into {folds} folds")
    perm = np.random.default_rng(seed).permutation(n)
    assignment = np.empty(n, dtype=np.intp)
    assignment[perm] = np.arange(n) % folds
    return CvPlan(assignment, folds, seed)


def mask_labels(train_indices, fraction: float, seed: int) -> np.ndarray:
    """Sorted seeded sample of ``ceil(fraction * len(train_indices))`` indices."""
    train_indices = np.asarray(train_indices, dtype=np.intp)
    if train_indices.size == 0:
        raise ValueError("empty training set")
    if not 0 < fraction <= 1:
        raise ValueError(f"labeled fraction must lie in (0, 1], got {fraction}")
    # round first so that e.g. 0.3 * 10 cannot ceil to 4
    count = max(1, math.ceil(round(fraction * train_indices.size, 9)))
    chosen = np.random.default_rng(seed).choice(train_indices.size, size=count, replace=False)
    return np.sort(train_indices[chosen])


def average_loss(truths, preds, kind: LossKind, desc: OutputDescriptor) -> float:
    truths, preds = list(truths), list(preds)
    if len(truths) != len(preds):
        raise ValueError(f"{len(truths)} truths but {len(preds)} predictions")
    if not truths:
        raise ValueError("cannot average over an empty test set")
    return sum(loss(kind, desc, a, b) for a, b in zip(truths, preds)) / len(truths)


def _require_labels(dataset: Dataset):
    if not dataset.fully_labeled:
        missing = next(dataset.ids[i] for i, y in enumerate(dataset.outputs) if y is None)
        raise ValueError(f"cross-validation needs every output; record {missing} has none")


def _metric(dataset: Dataset, metric) -> LossKind:
    return dataset.kind if metric is None else check_loss_kind(metric, dataset.desc)


def _run(dataset: Dataset, cfg: TrainConfig, protocol: Protocol, method: str,
         global_k: bool, keep_models: bool, metric) -> ExperimentReport:
    _require_labels(dataset)
    metric = _metric(dataset, metric)
    plan = make_cv_plan(dataset.n, protocol.folds, protocol.seed)
    losses, seconds, models = [], [], []
    for f in range(protocol.folds):
        train_rows, test_rows = plan.train_rows(f), plan.test_rows(f)
        try:
            labeled = mask_labels(train_rows, protocol.labeled_fraction, protocol.seed + f)
            split = dataset.split(train_rows, labeled)
            fold_cfg = replace(cfg, k=len(train_rows)) if global_k else cfg
            if fold_cfg.k > len(train_rows):
                raise ValueError(f"k={fold_cfg.k} exceeds the training-set size {len(train_rows)}")
            start = time.perf_counter()
            params, _ = train(split, fold_cfg)
            seconds.append(time.perf_counter() - start)
            preds = predict_batch(params, split.X, dataset.X[test_rows])
        except Exception as err:
            raise FoldFailed(f, err) from err
        truths = [dataset.outputs[r] for r in test_rows]
        losses.append(average_loss(truths, preds, metric, dataset.desc))
        if keep_models:
            models.append(params)
    config = dict(cfg.to_dict(), folds=protocol.folds,
                  labeled_fraction=protocol.labeled_fraction, protocol_seed=protocol.seed,
                  metric=metric.value)
    if global_k:
        config["k"] = "n_train"
    return ExperimentReport(method, losses, seconds, config, models)


def run_experiment(dataset: Dataset, cfg: TrainConfig, protocol: Protocol = Protocol(),
                   *, keep_models: bool = False, metric=None) -> ExperimentReport:
    """Cross-validated average structured loss of the local predictors.

    Each fold trains on the remaining folds with a freshly drawn labeled
    subset (seed ``protocol.seed + fold``) and predicts the held-out fold.
    Only training is timed. ``metric`` scores predictions with a loss other
    than the dataset's training loss.
    """
    return _run(dataset, cfg, protocol, "sslsop", False, keep_models, metric)


def run_global_baseline(dataset: Dataset, cfg: TrainConfig, protocol: Protocol = Protocol(),
                        *, keep_models: bool = False, metric=None) -> ExperimentReport:
    """Same protocol with ``k`` set to the training-set size, i.e. one shared predictor."""
    return _run(dataset, cfg, protocol, "global", True, keep_models, metric)


def run_majority_baseline(dataset: Dataset, protocol: Protocol = Protocol(),
                          *, metric=None) -> ExperimentReport:
    """Predict each fold's most frequent training output (earliest-seen on ties)."""
    _require_labels(dataset)
    metric = _metric(dataset, metric)
    plan = make_cv_plan(dataset.n, protocol.folds, protocol.seed)
    losses = []
    for f in range(protocol.folds):
        counts = Counter(dataset.outputs[r] for r in plan.train_rows(f))
        top = counts.most_common(1)[0][0]
        test = plan.test_rows(f)
        truths = [dataset.outputs[r] for r in test]
        losses.append(average_loss(truths, [top] * len(test), metric, dataset.desc))
    config = dict(folds=protocol.folds, protocol_seed=protocol.seed, metric=metric.value)
    return ExperimentReport("majority", losses, [0.0] * protocol.folds, config)


def min_train_size(n: int, folds: int) -> int:
    return n - math.ceil(n / folds)


def sweep(dataset: Dataset, cfg: TrainConfig, protocol: Protocol, param: str,
          values) -> list:
    """One experiment per value of ``k`` or ``C``; rows sorted by value."""
    values = list(values)
    if param not in ("k", "C"):
        raise ValueError(f"can only sweep 'k' or 'C', got {param!r}")
    if not values:
        raise ValueError("sweep needs at least one value")
    limit = min_train_size(dataset.n, protocol.folds)
    for v in values:
        if param == "k" and (int(v) != v or not 1 <= v <= limit):
            raise ValueError(f"k={v} is invalid; it must be an integer in [1, {limit}]")
        if param == "C" and not v >= 0:
            raise ValueError(f"C={v} is invalid; it must be nonnegative")
    rows = []
    for v in sorted(values):
        run_cfg = replace(cfg, k=int(v)) if param == "k" else replace(cfg, C=float(v))
        rep = run_experiment(dataset, run_cfg, protocol)
        rows.append(SweepRow(v, rep.mean_loss, rep.std_loss))
    return rows
