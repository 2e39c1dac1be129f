"""JSON-lines dataset/model/prediction files and CSV reports.

Every file starts with a single JSON header line.  Floats are written with
Python's shortest round-trip repr, so weights and features reload bit-exactly.
"""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from contextlib import contextmanager

import numpy as np

from .datasets import Dataset
from .structured import (
    DEFAULT_ENUMERATION_CAP,
    LossKind,
    Multiclass,
    OutputDescriptor,
    TagSequence,
    TreeLeaf,
    check_loss_kind,
    normalize_output,
)
from .trainer import ModelParams

SCHEMA = 1


class DataFileError(ValueError):
    """Malformed dataset or model file; ``line`` is 1-based."""

    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


# ---------------------------------------------------------------------------
# descriptors


def descriptor_to_json(desc: OutputDescriptor) -> dict:
    if isinstance(desc, Multiclass):
        out = {"family": "multiclass", "K": desc.K}
    elif isinstance(desc, TreeLeaf):
        out = {"family": "tree_leaf", "parent": list(desc.parent), "leaves": list(desc.leaves)}
    else:
        out = {"family": "tag_sequence", "T": desc.T, "L": desc.L}
    if desc.enumeration_cap != DEFAULT_ENUMERATION_CAP:
        out["enumeration_cap"] = desc.enumeration_cap
    return out


def descriptor_from_json(obj) -> OutputDescriptor:
    if not isinstance(obj, dict):
        raise ValueError("task must be a JSON object")
    cap = obj.get("enumeration_cap", DEFAULT_ENUMERATION_CAP)
    family = obj.get("family")
    try:
        if family == "multiclass":
            return Multiclass(_int(obj["K"], "K"), cap)
        if family == "tree_leaf":
            leaves = obj.get("leaves")
            return TreeLeaf(tuple(obj["parent"]), None if leaves is None else tuple(leaves), cap)
        if family == "tag_sequence":
            return TagSequence(_int(obj["T"], "T"), _int(obj["L"], "L"), cap)
    except KeyError as err:
        raise ValueError(f"task is missing field {err.args[0]!r}") from None
    except TypeError as err:
        raise ValueError(f"malformed task descriptor: {err}") from None
    raise ValueError(f"unknown task family {family!r}")


def _int(v, name):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValueError(f"{name} must be an integer")
    return v


def output_to_json(y):
    return list(y) if isinstance(y, tuple) else y


# ---------------------------------------------------------------------------
# writing


@contextmanager
def atomic_write(path, newline=None):
    """Open a temp file next to ``path`` and rename it into place on success."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline=newline) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _dumps(obj) -> str:
    return json.dumps(obj, allow_nan=False, separators=(", ", ": "))


def dataset_header(ds: Dataset, config: dict | None = None) -> dict:
    header = {"schema": SCHEMA, "d": ds.d, "task": descriptor_to_json(ds.desc),
              "loss": ds.kind.value}
    if config is not None:
        header["config"] = config
    return header


def write_dataset(path, ds: Dataset, config: dict | None = None):
    with atomic_write(path) as fh:
        fh.write(_dumps(dataset_header(ds, config)) + "\n")
        for rid, x, y in zip(ds.ids, ds.X, ds.outputs):
            rec = {"id": rid, "features": x.tolist(),
                   "output": None if y is None else output_to_json(y)}
            fh.write(_dumps(rec) + "\n")


def write_model(path, params: ModelParams, X_train, config: dict | None = None):
    X_train = np.asarray(X_train, dtype=float)
    header = {"schema": SCHEMA, "n": params.n, "m": params.m, "k": params.k,
              "d": X_train.shape[1], "task": descriptor_to_json(params.desc),
              "loss": LossKind(params.kind).value}
    if config is not None:
        header["config"] = config
    with atomic_write(path) as fh:
        fh.write(_dumps(header) + "\n")
        for i, w in enumerate(params.w):
            fh.write(_dumps({"i": i, "w": w.tolist()}) + "\n")
        for i, x in enumerate(X_train):
            fh.write(_dumps({"i": i, "x": x.tolist()}) + "\n")


def write_predictions(path, ids, preds, header: dict):
    with atomic_write(path) as fh:
        fh.write(_dumps(header) + "\n")
        for rid, y in zip(ids, preds):
            fh.write(_dumps({"id": rid, "output": output_to_json(y)}) + "\n")


def write_csv(path, columns, rows, config: dict | None = None):
    """CSV with an optional leading ``# config: {...}`` comment line."""
    with atomic_write(path, newline="") as fh:
        if config is not None:
            fh.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_csv_value(v) for v in row])


def _csv_value(v):
    return repr(v) if isinstance(v, float) else v


def read_csv(path) -> list:
    """Rows as dicts, skipping ``#`` comment lines."""
    with open(path, encoding="utf-8", newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


# ---------------------------------------------------------------------------
# reading


def _lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if raw.strip():
                yield lineno, raw


def _parse(path, lineno, raw):
    try:
        return json.loads(raw)
    except json.JSONDecodeError as err:
        raise DataFileError(path, lineno, f"invalid JSON: {err.msg}") from None


def _header(path, it, required):
    try:
        lineno, raw = next(it)
    except StopIteration:
        raise DataFileError(path, 1, "missing header line") from None
    header = _parse(path, lineno, raw)
    if not isinstance(header, dict) or "schema" not in header:
        raise DataFileError(path, lineno, "missing header line (no 'schema' field)")
    if header["schema"] != SCHEMA:
        raise DataFileError(path, lineno, f"unsupported schema {header['schema']!r}")
    for key in required:
        if key not in header:
            raise DataFileError(path, lineno, f"header lacks {key!r}")
    return header


def _floats(path, lineno, values, d, what):
    if not isinstance(values, list) or any(
        isinstance(v, bool) or not isinstance(v, (int, float)) for v in values
    ):
        raise DataFileError(path, lineno, f"{what} must be an array of numbers")
    if len(values) != d:
        raise DataFileError(path, lineno, f"{what} has length {len(values)}, expected {d}")
    if not all(math.isfinite(v) for v in values):
        raise DataFileError(path, lineno, f"{what} contains non-finite values")
    return values


def _task(path, lineno, header):
    try:
        desc = descriptor_from_json(header["task"])
        kind = check_loss_kind(header.get("loss", LossKind.ZERO_ONE.value), desc)
    except ValueError as err:
        raise DataFileError(path, lineno, str(err)) from None
    return desc, kind


def read_dataset(path) -> tuple:
    """Load a dataset file; returns ``(Dataset, header)``."""
    it = _lines(path)
    header = _header(path, it, ("d", "task"))
    d = header["d"]
    if isinstance(d, bool) or not isinstance(d, int) or d < 1:
        raise DataFileError(path, 1, "header field 'd' must be a positive integer")
    desc, kind = _task(path, 1, header)
    if isinstance(desc, TagSequence) and d % desc.L:
        raise DataFileError(path, 1, f"d={d} is not divisible by sequence length {desc.L}")
    ids, X, outputs, seen = [], [], [], set()
    for lineno, raw in it:
        rec = _parse(path, lineno, raw)
        if not isinstance(rec, dict) or "features" not in rec or "id" not in rec:
            raise DataFileError(path, lineno, "record needs 'id' and 'features'")
        rid = rec["id"]
        if not isinstance(rid, str):
            raise DataFileError(path, lineno, "record id must be a string")
        if rid in seen:
            raise DataFileError(path, lineno, f"duplicate id {rid!r}")
        seen.add(rid)
        X.append(_floats(path, lineno, rec["features"], d, "features"))
        y = rec.get("output")
        if y is not None:
            try:
                y = normalize_output(desc, y)
            except (ValueError, TypeError) as err:
                raise DataFileError(path, lineno, f"invalid output: {err}") from None
        ids.append(rid)
        outputs.append(y)
    X = np.array(X, dtype=float).reshape(len(ids), d)
    return Dataset(X, outputs, desc, kind, ids), header


def read_model(path) -> tuple:
    """Load a model file; returns ``(ModelParams, X_train, header)``."""
    it = _lines(path)
    header = _header(path, it, ("n", "m", "k", "d", "task"))
    n, m, k, d = (header[f] for f in ("n", "m", "k", "d"))
    for name, v in (("n", n), ("m", m), ("k", k), ("d", d)):
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            raise DataFileError(path, 1, f"header field {name!r} must be a positive integer")
    if k > n:
        raise DataFileError(path, 1, f"k={k} exceeds n={n}")
    desc, kind = _task(path, 1, header)
    try:
        expected_m = desc.joint_dim(d)
    except ValueError as err:
        raise DataFileError(path, 1, str(err)) from None
    if expected_m != m:
        raise DataFileError(path, 1, f"m={m} does not match the task's joint dimension {expected_m}")
    W = [None] * n
    X = [None] * n
    last = 1
    for lineno, raw in it:
        last = lineno
        rec = _parse(path, lineno, raw)
        if not isinstance(rec, dict) or "i" not in rec:
            raise DataFileError(path, lineno, "record needs an index 'i'")
        i = rec["i"]
        if isinstance(i, bool) or not isinstance(i, int) or not 0 <= i < n:
            raise DataFileError(path, lineno, f"index {i!r} outside [0, {n})")
        if "w" in rec:
            if W[i] is not None:
                raise DataFileError(path, lineno, f"duplicate weight record {i}")
            W[i] = _floats(path, lineno, rec["w"], m, "w")
        elif "x" in rec:
            if X[i] is not None:
                raise DataFileError(path, lineno, f"duplicate feature record {i}")
            X[i] = _floats(path, lineno, rec["x"], d, "x")
        else:
            raise DataFileError(path, lineno, "record needs 'w' or 'x'")
    missing_w = [i for i, w in enumerate(W) if w is None]
    missing_x = [i for i, x in enumerate(X) if x is None]
    if missing_w:
        raise DataFileError(path, last, f"missing weight records, first is {missing_w[0]}")
    if missing_x:
        raise DataFileError(path, last, f"missing feature records, first is {missing_x[0]}")
    params = ModelParams(w=np.array(W, dtype=float), desc=desc, kind=kind, k=k)
    return params, np.array(X, dtype=float), header
