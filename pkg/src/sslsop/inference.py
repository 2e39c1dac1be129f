"""Prediction for new inputs by averaging the scores of nearby local predictors."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .neighborhood import neighbors_of_queries
from .structured import Output, enumerate_outputs, feature_table
from .trainer import ModelParams


class ScoredCandidate(NamedTuple):
    candidate: Output
    s: float


def _check(model: ModelParams, X_train, queries):
    X_train = np.asarray(X_train, dtype=float)
    queries = np.asarray(queries, dtype=float)
    if X_train.ndim != 2 or X_train.shape[0] != model.n:
        raise ValueError(f"model has {model.n} local predictors but X_train has "
                         f"{X_train.shape[0] if X_train.ndim else 0} rows")
    if model.desc.joint_dim(X_train.shape[1]) != model.m:
        raise ValueError("training features do not match the model's joint dimension")
    if queries.ndim != 2 or queries.shape[1] != X_train.shape[1]:
        raise ValueError(f"query dimension {queries.shape[-1]} does not match "
                         f"training dimension {X_train.shape[1]}")
    if not np.all(np.isfinite(queries)):
        raise ValueError("query contains non-finite values")
    return X_train, queries


def _average_scores(model: ModelParams, X_train, queries) -> np.ndarray:
    enumerate_outputs(model.desc)
    nbrs = neighbors_of_queries(X_train, queries, model.k)
    phi = feature_table(model.desc, queries)
    # per-neighbor scores, summed then divided by k
    per = np.einsum("qcm,qkm->qck", phi, model.w[nbrs])
    return per.sum(axis=2) / model.k


def candidate_scores(model: ModelParams, X_train, x) -> list:
    """Every candidate with its averaged matching score, in canonical order."""
    X_train, q = _check(model, X_train, np.asarray(x, dtype=float)[None, :])
    s = _average_scores(model, X_train, q)[0]
    return [ScoredCandidate(c, float(v)) for c, v in zip(enumerate_outputs(model.desc), s)]


def predict(model: ModelParams, X_train, x) -> Output:
    """Highest averaged score over the ``k`` training points nearest ``x``; first wins ties."""
    return predict_batch(model, X_train, [x])[0]


def predict_batch(model: ModelParams, X_train, queries) -> list:
    queries = list(queries)
    if not queries:
        return []
    X_train = np.asarray(X_train, dtype=float)
    d = X_train.shape[1] if X_train.ndim == 2 else None
    for q_i, q in enumerate(queries):
        q = np.asarray(q, dtype=float)
        if q.ndim != 1 or q.shape[0] != d or not np.all(np.isfinite(q)):
            raise ValueError(f"query {q_i} is invalid: expected {d} finite features")
    X_train, Q = _check(model, X_train, np.stack([np.asarray(q, dtype=float) for q in queries]))
    cands = enumerate_outputs(model.desc)
    out = []
    step = 256
    for s in range(0, Q.shape[0], step):
        scores = _average_scores(model, X_train, Q[s:s + step])
        out.extend(cands[c] for c in np.argmax(scores, axis=1))
    return out
