"""Command-line interface: ``synth``, ``train``, ``predict``, ``eval``, ``sweep``.

Exit codes: 0 ok, 2 usage, 3 I/O failure, 4 data validation, 5 numeric failure.
Training options resolve as command-line flag, then ``--config`` JSON file,
then built-in default; the resolved values are echoed into output headers.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import io
from .datasets import FAMILIES, SyntheticSpec, generate_synthetic
from .evaluation import (
    FoldFailed,
    Protocol,
    min_train_size,
    mask_labels,
    run_experiment,
    run_global_baseline,
    sweep,
)
from .inference import predict_batch
from .io import DataFileError
from .structured import SpaceTooLarge
from .trainer import InitPolicy, TrainConfig, TrainingDiverged, train

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4, 5

log = logging.getLogger("sslsop")

TRAIN_DEFAULTS = {
    "k": 10,
    "C": 0.1,
    "eta": 0.05,
    "T": 50,
    "seed": 0,
    "init_policy": InitPolicy.NEAREST_LABELED.value,
    "labeled_fraction": None,
    "folds": 10,
}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# argument parsing


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be a nonnegative integer, got {text}")
    return v


def _fraction(text):
    v = float(text)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1], got {text}")
    return v


def _add_train_flags(p, *, folds=False):
    p.add_argument("--data", required=True, help="dataset JSON-lines file")
    p.add_argument("--config", help="JSON file with default option values")
    p.add_argument("--k", type=_positive_int, help="neighborhood size (default 10)")
    p.add_argument("--C", type=float, help="regularization weight (default 0.1)")
    p.add_argument("--eta", type=float, help="learning rate (default 0.05)")
    p.add_argument("--T", type=_nonneg_int, help="iterations (default 50)")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--init-policy", dest="init_policy",
                   choices=[p.value for p in InitPolicy])
    p.add_argument("--labeled-fraction", dest="labeled_fraction", type=_fraction,
                   help="fraction of labeled records kept labeled")
    if folds:
        p.add_argument("--folds", type=_positive_int, help="cross-validation folds (default 10)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sslsop",
        description="Semi-supervised local structured-output predictors.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--family", required=True, choices=FAMILIES)
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--d", type=_positive_int, default=2)
    p.add_argument("--modes", type=_positive_int, default=1)
    p.add_argument("--classes", type=_positive_int, default=2)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train local predictors and save the model")
    _add_train_flags(p)
    p.add_argument("--model-out", dest="model_out", required=True)
    p.add_argument("--log", dest="log_path", help="iteration log CSV")

    p = sub.add_parser("predict", help="predict outputs for a query file")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="cross-validated average loss")
    _add_train_flags(p, folds=True)
    p.add_argument("--baseline", action="store_true", help="also run the k = n_train baseline")
    p.add_argument("--out", required=True)

    p = sub.add_parser("sweep", help="cross-validated loss over values of k or C")
    _add_train_flags(p, folds=True)
    p.add_argument("--param", required=True, choices=["k", "C"])
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--out", required=True)
    return parser


def _resolve(args) -> dict:
    """Merge flag values over config-file values over defaults."""
    file_values = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                file_values = json.load(fh)
        except OSError as err:
            raise CliError(EXIT_IO, f"cannot read config {args.config}: {err}") from None
        except json.JSONDecodeError as err:
            raise CliError(EXIT_USAGE, f"--config {args.config} is not valid JSON: {err}") from None
        if not isinstance(file_values, dict):
            raise CliError(EXIT_USAGE, "--config must hold a JSON object")
        unknown = set(file_values) - set(TRAIN_DEFAULTS)
        if unknown:
            raise CliError(EXIT_USAGE, f"--config has unknown keys: {', '.join(sorted(unknown))}")
    out = {}
    for key, default in TRAIN_DEFAULTS.items():
        flag = getattr(args, key, None)
        out[key] = flag if flag is not None else file_values.get(key, default)
    return out


def _train_config(opts) -> TrainConfig:
    try:
        return TrainConfig(k=int(opts["k"]), C=float(opts["C"]), eta=float(opts["eta"]),
                           T=int(opts["T"]), seed=int(opts["seed"]),
                           init_policy=opts["init_policy"])
    except (ValueError, TypeError) as err:
        raise CliError(EXIT_USAGE, f"invalid training options: {err}") from None


def _protocol(opts) -> Protocol:
    fraction = opts["labeled_fraction"]
    return Protocol(folds=int(opts["folds"]),
                    labeled_fraction=0.3 if fraction is None else float(fraction),
                    seed=int(opts["seed"]))


def _load_dataset(path):
    try:
        return io.read_dataset(path)
    except OSError as err:
        raise CliError(EXIT_IO, f"cannot read {path}: {err}") from None
    except DataFileError as err:
        raise CliError(EXIT_DATA, str(err)) from None


def _write(fn, *args, **kwargs):
    try:
        fn(*args, **kwargs)
    except OSError as err:
        raise CliError(EXIT_IO, f"cannot write output: {err}") from None


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    try:
        spec = SyntheticSpec(family=args.family, n=args.n, d=args.d, modes=args.modes,
                             noise=args.noise, seed=args.seed, classes=args.classes)
    except ValueError as err:
        raise CliError(EXIT_USAGE, f"invalid synth flags: {err}") from None
    ds = generate_synthetic(spec)
    config = {"family": spec.family, "n": spec.n, "d": spec.d, "modes": spec.modes,
              "classes": spec.classes, "noise": spec.noise, "seed": spec.seed}
    _write(io.write_dataset, args.out, ds, config)
    return EXIT_OK


def train_from_dataset(ds, opts: dict):
    """The labeled split and training run behind ``sslsop train``."""
    cfg = _train_config(opts)
    labeled = [i for i, y in enumerate(ds.outputs) if y is not None]
    if not labeled:
        raise CliError(EXIT_DATA, "dataset has no labeled records")
    if opts["labeled_fraction"] is not None:
        labeled = mask_labels(labeled, float(opts["labeled_fraction"]), cfg.seed).tolist()
    if cfg.k > ds.n:
        raise CliError(EXIT_USAGE, f"--k {cfg.k} exceeds the number of records {ds.n}")
    split = ds.split(np.arange(ds.n), labeled)
    records = []
    try:
        params, state = train(split, cfg, on_iteration=records.append)
    except TrainingDiverged as err:
        raise CliError(EXIT_NUMERIC, str(err)) from None
    except SpaceTooLarge as err:
        raise CliError(EXIT_DATA, str(err)) from None
    return params, split, records


def cmd_train(args) -> int:
    opts = _resolve(args)
    ds, _ = _load_dataset(args.data)
    params, split, records = train_from_dataset(ds, opts)
    config = dict(opts, data=args.data)
    _write(io.write_model, args.model_out, params, split.X, config)
    if args.log_path:
        _write(io.write_csv, args.log_path, ["iteration", "objective", "outputs_changed"],
               records, config)
    log.info("trained %d local predictors (%d labeled)", params.n, len(split.labeled))
    return EXIT_OK


def cmd_predict(args) -> int:
    try:
        params, X_train, header = io.read_model(args.model)
    except OSError as err:
        raise CliError(EXIT_IO, f"cannot read {args.model}: {err}") from None
    except DataFileError as err:
        raise CliError(EXIT_DATA, str(err)) from None
    ds, _ = _load_dataset(args.data)
    if ds.d != X_train.shape[1]:
        raise CliError(EXIT_DATA, f"query dimension d={ds.d} does not match model "
                                  f"dimension d={X_train.shape[1]}")
    if ds.desc != params.desc:
        raise CliError(EXIT_DATA, "query task descriptor differs from the model's: "
                                  f"{io.descriptor_to_json(ds.desc)} vs "
                                  f"{io.descriptor_to_json(params.desc)}")
    try:
        preds = predict_batch(params, X_train, list(ds.X))
    except SpaceTooLarge as err:
        raise CliError(EXIT_DATA, str(err)) from None
    out_header = {"schema": io.SCHEMA, "task": io.descriptor_to_json(params.desc),
                  "config": {"model": args.model, "data": args.data,
                             "train": header.get("config")}}
    _write(io.write_predictions, args.out, ds.ids, preds, out_header)
    return EXIT_OK


def _load_eval(args):
    opts = _resolve(args)
    ds, _ = _load_dataset(args.data)
    if not ds.fully_labeled:
        missing = next(ds.ids[i] for i, y in enumerate(ds.outputs) if y is None)
        raise CliError(EXIT_DATA, f"evaluation needs every output; record {missing!r} has none")
    cfg = _train_config(opts)
    protocol = _protocol(opts)
    if protocol.folds > ds.n:
        raise CliError(EXIT_USAGE, f"--folds {protocol.folds} exceeds the {ds.n} records")
    return ds, opts, cfg, protocol


def _run_guarded(fn, *args):
    try:
        return fn(*args)
    except FoldFailed as err:
        if isinstance(err.error, TrainingDiverged):
            raise CliError(EXIT_NUMERIC, str(err)) from None
        if isinstance(err.error, SpaceTooLarge):
            raise CliError(EXIT_DATA, str(err)) from None
        raise


def report_rows(report) -> list:
    rows = [(report.method, f, loss, sec) for f, (loss, sec) in
            enumerate(zip(report.per_fold_loss, report.per_fold_train_seconds))]
    rows.append((report.method, "mean", report.mean_loss,
                 float(np.mean(report.per_fold_train_seconds))))
    return rows


def cmd_eval(args) -> int:
    ds, opts, cfg, protocol = _load_eval(args)
    limit = min_train_size(ds.n, protocol.folds)
    if cfg.k > limit:
        raise CliError(EXIT_USAGE, f"--k {cfg.k} exceeds the smallest training fold ({limit})")
    reports = [_run_guarded(run_experiment, ds, cfg, protocol)]
    if args.baseline:
        reports.append(_run_guarded(run_global_baseline, ds, cfg, protocol))
    rows = [row for rep in reports for row in report_rows(rep)]
    _write(io.write_csv, args.out, ["method", "fold_id", "loss", "seconds"], rows,
           dict(opts, data=args.data, baseline=args.baseline))
    for rep in reports:
        print(f"{rep.method} mean_loss={rep.mean_loss!r}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    ds, opts, cfg, protocol = _load_eval(args)
    values = []
    for text in args.values.split(","):
        text = text.strip()
        try:
            values.append(int(text) if args.param == "k" else float(text))
        except ValueError:
            raise CliError(EXIT_USAGE, f"--values: {text!r} is not a valid {args.param}") from None
    limit = min_train_size(ds.n, protocol.folds)
    for v in values:
        if args.param == "k" and not 1 <= v <= limit:
            raise CliError(EXIT_USAGE, f"--values: k={v} must lie in [1, {limit}] "
                                       "(smallest training fold)")
        if args.param == "C" and not (v >= 0 and v * cfg.eta < 1):
            raise CliError(EXIT_USAGE, f"--values: C={v} must be nonnegative with eta*C < 1")
    rows = _run_guarded(sweep, ds, cfg, protocol, args.param, values)
    _write(io.write_csv, args.out, ["param_value", "mean_loss", "std_loss"], rows,
           dict(opts, data=args.data, param=args.param))
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except CliError as err:
        print(f"sslsop {args.command}: {err}", file=sys.stderr)
        return err.code


if __name__ == "__main__":
    sys.exit(main())
