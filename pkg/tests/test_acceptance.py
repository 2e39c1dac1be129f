"""Acceptance criteria, one marked group of tests per criterion.

The terminal summary prints one PASS/FAIL line per criterion.
"""

import json
import time

import numpy as np
import pytest

from sslsop import io
from sslsop.cli import main
from sslsop.datasets import Dataset, SyntheticSpec, generate_synthetic
from sslsop.evaluation import (
    Protocol,
    mask_labels,
    run_experiment,
    run_global_baseline,
    run_majority_baseline,
)
from sslsop.inference import predict_batch
from sslsop.neighborhood import build_index
from sslsop.structured import (
    LossKind,
    Multiclass,
    TagSequence,
    TreeLeaf,
    enumerate_outputs,
    joint_feature,
    loss,
    loss_aug_argmax,
)
from sslsop.trainer import (
    DatasetSplit,
    TrainConfig,
    init_state,
    local_objective,
    local_subgradient,
    objective,
    train,
    update_bounds,
    update_weights,
)

import oracle

XOR = dict(family="multiclass", n=400, d=2, modes=2, noise=0.15, seed=42)


def report(label, **values):
    print(f"[{label}] " + " ".join(f"{k}={v!r}" for k, v in values.items()))


def random_tree(rng, max_nodes=10):
    size = int(rng.integers(2, max_nodes + 1))
    parent = [-1] + [int(rng.integers(0, i)) for i in range(1, size)]
    return TreeLeaf(tuple(parent))


def random_descriptor(rng, family):
    if family == "multiclass":
        return Multiclass(int(rng.integers(2, 6))), LossKind.ZERO_ONE, int(rng.integers(1, 5))
    if family == "tree":
        return random_tree(rng), LossKind.TREE_ANCESTOR_HEIGHT, int(rng.integers(1, 5))
    return TagSequence(3, 4), LossKind.ZERO_ONE, 4 * int(rng.integers(1, 4))


def random_split(rng, family, n=None, unit_rows=False):
    desc, kind, d = random_descriptor(rng, family)
    n = n or int(rng.integers(4, 13))
    X = rng.standard_normal((n, d))
    if unit_rows:
        X /= np.linalg.norm(X, axis=1, keepdims=True)
    cands = enumerate_outputs(desc)
    n_lab = max(1, int(np.ceil(0.3 * n)))
    lab = rng.choice(n, size=n_lab, replace=False)
    labeled = {int(i): cands[int(rng.integers(len(cands)))] for i in lab}
    return DatasetSplit(X, labeled, desc, kind)


# -- 1 --------------------------------------------------------------------------------

@pytest.mark.criterion(1, "loss-augmented bound >= loss of prediction >= 0 (exhaustive)")
def test_upper_bound_chain():
    start = time.perf_counter()
    violations = 0
    for f_i, family in enumerate(("multiclass", "tree", "sequence")):
        rng = np.random.default_rng(1000 + f_i)
        for _ in range(1000):
            desc, kind, d = random_descriptor(rng, family)
            cands = enumerate_outputs(desc)
            x = rng.standard_normal(d)
            w = rng.standard_normal(desc.joint_dim(d)) * float(rng.choice([0.01, 1.0, 10.0]))
            y = cands[int(rng.integers(len(cands)))]
            # exhaustive reference built from joint_feature directly
            scores = [float(w @ joint_feature(desc, x, c)) for c in cands]
            pred = cands[oracle.first_argmax(scores)]
            s_true = float(w @ joint_feature(desc, x, y))
            ref_bound = max(s - s_true + loss(kind, desc, y, c) for s, c in zip(scores, cands))
            _, bound = loss_aug_argmax(w, desc, kind, x, y)
            delta = loss(kind, desc, y, pred)
            if not (abs(bound - ref_bound) <= 1e-9 * max(1.0, abs(ref_bound))
                    and bound >= delta - 1e-12 and delta >= 0):
                violations += 1
    elapsed = time.perf_counter() - start
    report("criterion 1", triples=3000, violations=violations, seconds=round(elapsed, 2))
    assert violations == 0
    assert elapsed < 30


# -- 2 --------------------------------------------------------------------------------

@pytest.mark.criterion(2, "analytic subgradient matches central differences")
def test_gradient_check():
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    h = 1e-5
    worst = 0.0
    for t in range(100):
        data = random_split(rng, ("multiclass", "tree", "sequence")[t % 3])
        k = int(rng.integers(1, data.n + 1))
        C = float(rng.choice([0.0, 0.1, 1.0]))
        index = build_index(data.X, k)
        params, state = init_state(data, index, TrainConfig(k=k, C=C))
        params.w = rng.standard_normal(params.w.shape)
        state.z = update_bounds(params, state, data, index)
        i = int(rng.integers(data.n))
        w_i = rng.standard_normal(data.m)
        g = local_subgradient(w_i, i, state, data, index, C)
        fd = np.empty(data.m)
        for a in range(data.m):
            e = np.zeros(data.m)
            e[a] = h
            fd[a] = (local_objective(w_i + e, i, state, data, index, C)
                     - local_objective(w_i - e, i, state, data, index, C)) / (2 * h)
        scale = max(np.linalg.norm(g), np.finfo(float).tiny)
        worst = max(worst, float(np.linalg.norm(fd - g) / scale))
    elapsed = time.perf_counter() - start
    report("criterion 2", instances=100, max_relative_error=worst, seconds=round(elapsed, 2))
    assert worst < 1e-6
    assert elapsed < 10


# -- 3 --------------------------------------------------------------------------------

@pytest.mark.criterion(3, "full training run equals the brute-force oracle")
def test_oracle_equivalence():
    rng = np.random.default_rng(7)
    X = rng.standard_normal((6, 2))
    y = rng.integers(2, size=6)
    labeled = {i: int(y[i]) for i in (0, 2, 4)}
    data = DatasetSplit(X, labeled, Multiclass(2))
    params, state = train(data, TrainConfig(k=2, T=2, eta=0.05, C=0.1, seed=7))
    w_ref, y_ref = oracle.train_oracle(X.tolist(), labeled, [0, 1], oracle.tensor_phi(2),
                                       oracle.zero_one, 2, 0.1, 0.05, 2)
    err = float(np.abs(params.w - np.array(w_ref)).max())
    report("criterion 3", max_abs_weight_diff=err, outputs=state.y, oracle_outputs=y_ref)
    assert err <= 1e-10
    assert state.y == y_ref


# -- 4 --------------------------------------------------------------------------------

@pytest.mark.criterion(4, "one weight phase never raises the fixed-bound objective")
def test_fixed_bound_descent():
    eta, C = 0.01, 0.1
    worst_rise = -np.inf
    for trial in range(50):
        family = ("multiclass", "tree", "sequence")[trial % 3]
        spec = SyntheticSpec(family, 40, 12 if family == "sequence" else 3,
                             modes=2, noise=0.3, seed=trial)
        ds = generate_synthetic(spec)
        X = ds.X / np.linalg.norm(ds.X, axis=1, keepdims=True)
        rng = np.random.default_rng(trial)
        lab = rng.choice(ds.n, size=12, replace=False)
        data = DatasetSplit(X, {int(i): ds.outputs[i] for i in lab}, ds.desc, ds.kind)
        cfg = TrainConfig(k=int(rng.integers(1, 15)), C=C, eta=eta)
        index = build_index(data.X, cfg.k)
        params, state = init_state(data, index, cfg)
        params.w = rng.standard_normal(params.w.shape) * float(rng.choice([0.0, 0.1, 1.0, 5.0]))
        state.z = update_bounds(params, state, data, index)
        before = objective(params, state, data, index, C)
        local_before = [local_objective(params.w[i], i, state, data, index, C) for i in range(data.n)]
        params.w = update_weights(params, state, data, index, cfg)
        after = objective(params, state, data, index, C)
        local_after = [local_objective(params.w[i], i, state, data, index, C) for i in range(data.n)]
        worst_rise = max(worst_rise, after - before,
                         max(a - b for a, b in zip(local_after, local_before)))
    report("criterion 4", trials=50, worst_rise=worst_rise)
    assert worst_rise <= 1e-12


# -- 5 --------------------------------------------------------------------------------

@pytest.mark.criterion(5, "labeled outputs stay fixed after every phase")
@pytest.mark.parametrize("family,d", [("multiclass", 2), ("tree", 2), ("sequence", 12)])
def test_labeled_constraint_invariant(family, d):
    ds = generate_synthetic(SyntheticSpec(family, 120, d, modes=2, noise=0.3, seed=5))
    lab = mask_labels(np.arange(ds.n), 0.3, 5)
    data = ds.split(np.arange(ds.n), lab)
    checks = {"count": 0, "violations": 0}

    def on_phase(phase, params, state):
        checks["count"] += 1
        bad = state.y_idx[data.labeled_mask] != data.labeled_idx[data.labeled_mask]
        checks["violations"] += int(bad.sum())

    train(data, TrainConfig(k=10, T=50), on_phase=on_phase)
    report("criterion 5", family=family, phase_checks=checks["count"], violations=checks["violations"])
    assert checks["count"] == 1 + 3 * 50
    assert checks["violations"] == 0


# -- 6 --------------------------------------------------------------------------------

@pytest.mark.criterion(6, "local predictors beat the single global predictor on XOR data")
@pytest.mark.slow
def test_local_beats_global():
    ds = generate_synthetic(SyntheticSpec(**XOR))
    cfg = TrainConfig(k=20, C=0.1, eta=0.05, T=50)
    protocol = Protocol(folds=10, labeled_fraction=0.3)
    start = time.perf_counter()
    local = run_experiment(ds, cfg, protocol)
    glob = run_global_baseline(ds, cfg, protocol)
    elapsed = time.perf_counter() - start
    report("criterion 6", local=local.mean_loss, global_=glob.mean_loss, seconds=round(elapsed, 2))
    assert local.mean_loss <= glob.mean_loss - 0.05
    assert elapsed < 60


# -- 7 --------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def xor_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("xor") / "xor.jsonl"
    args = ["synth", "--out", str(path)]
    for key, v in XOR.items():
        args += [f"--{key}", str(v)]
    assert main(args) == 0
    return path


_sweep_seconds = []


def run_cli_sweep(xor_file, tmp_path, param, values):
    out = tmp_path / f"sweep_{param}.csv"
    start = time.perf_counter()
    code = main(["sweep", "--data", str(xor_file), "--param", param,
                 "--values", ",".join(map(str, values)), "--k", "20", "--C", "0.1",
                 "--eta", "0.05", "--T", "50", "--out", str(out)])
    _sweep_seconds.append(time.perf_counter() - start)
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("# config: ")
    config = json.loads(lines[0][len("# config: "):])
    assert config["param"] == param
    assert lines[1] == "param_value,mean_loss,std_loss"
    rows = io.read_csv(out)
    assert [float(r["param_value"]) for r in rows] == [float(v) for v in values]
    losses = [float(r["mean_loss"]) for r in rows]
    assert all(0 <= v <= 1 for v in losses)
    assert all(float(r["std_loss"]) >= 0 for r in rows)
    return losses


@pytest.mark.criterion(7, "k and C sweeps complete and stay within a 0.15 band")
@pytest.mark.slow
def test_sensitivity_k(xor_file, tmp_path):
    losses = run_cli_sweep(xor_file, tmp_path, "k", [5, 10, 20, 50])
    report("criterion 7", param="k", mean_losses=losses, band=max(losses) - min(losses))
    assert max(losses) - min(losses) <= 0.15


@pytest.mark.criterion(7, "k and C sweeps complete and stay within a 0.15 band")
@pytest.mark.slow
def test_sensitivity_C(xor_file, tmp_path):
    losses = run_cli_sweep(xor_file, tmp_path, "C", [0.01, 0.1, 1, 10])
    report("criterion 7", param="C", mean_losses=losses, band=max(losses) - min(losses),
           total_sweep_seconds=round(sum(_sweep_seconds), 2))
    assert sum(_sweep_seconds) < 300
    assert max(losses) - min(losses) <= 0.15


# -- 8 --------------------------------------------------------------------------------

@pytest.mark.criterion(8, "k = n gives identical local predictors")
@pytest.mark.parametrize("family,d", [("multiclass", 2), ("tree", 3), ("sequence", 8)])
def test_k_equals_n(family, d):
    ds = generate_synthetic(SyntheticSpec(family, 37, d, modes=2, noise=0.4, seed=8))
    data = ds.split(np.arange(ds.n), mask_labels(np.arange(ds.n), 0.3, 8))
    params, _ = train(data, TrainConfig(k=ds.n, T=20))
    diff = float(np.abs(params.w - params.w[0]).max())
    report("criterion 8", family=family, max_pairwise_diff=diff, weight_norm=float(np.abs(params.w).max()))
    assert params.w.any()
    assert diff == 0.0


# -- 9 --------------------------------------------------------------------------------

@pytest.mark.criterion(9, "CLI round trip is bit-exact and validators use the exit codes")
@pytest.mark.parametrize("family,d", [("multiclass", 2), ("tree", 2), ("sequence", 12)])
def test_cli_round_trip(tmp_path, family, d):
    data, queries = tmp_path / "d.jsonl", tmp_path / "q.jsonl"
    model, preds = tmp_path / "m.jsonl", tmp_path / "p.jsonl"
    common = ["--family", family, "--n", "60", "--d", str(d), "--modes", "2", "--noise", "0.3"]
    assert main(["synth", *common, "--seed", "1", "--out", str(data)]) == 0
    assert main(["synth", *common, "--seed", "2", "--out", str(queries)]) == 0
    assert main(["train", "--data", str(data), "--model-out", str(model), "--k", "6",
                 "--T", "15", "--seed", "3", "--labeled-fraction", "0.3"]) == 0
    assert main(["predict", "--model", str(model), "--data", str(queries), "--out", str(preds)]) == 0

    ds, _ = io.read_dataset(data)
    qs, _ = io.read_dataset(queries)
    lab = mask_labels(np.arange(ds.n), 0.3, 3)
    params, _ = train(ds.split(np.arange(ds.n), lab), TrainConfig(k=6, T=15, seed=3))
    expected = predict_batch(params, ds.X, list(qs.X))
    loaded, X_train, _ = io.read_model(model)
    assert loaded.w.tobytes() == params.w.tobytes()
    assert X_train.tobytes() == ds.X.tobytes()
    lines = preds.read_text().splitlines()[1:]
    got = [json.loads(ln) for ln in lines]
    assert [g["id"] for g in got] == qs.ids
    assert [g["output"] for g in got] == [io.output_to_json(y) for y in expected]
    report("criterion 9", family=family, predictions=len(got), bit_exact=True)


def _header(d=2):
    return {"schema": 1, "d": d, "task": {"family": "multiclass", "K": 2}, "loss": "zero_one"}


def _good(i, d=2):
    return {"id": f"r{i}", "features": [float(i)] * d, "output": i % 2}


MALFORMED = {
    "wrong-length features": [_header(), _good(0), {"id": "r1", "features": [1.0], "output": 0}],
    "out-of-range output": [_header(), _good(0), {"id": "r1", "features": [1.0, 1.0], "output": 2}],
    "duplicate id": [_header(), _good(0), {"id": "r0", "features": [1.0, 1.0], "output": 0}],
    "missing header": [_good(0), _good(1)],
}


@pytest.mark.criterion(9, "CLI round trip is bit-exact and validators use the exit codes")
@pytest.mark.parametrize("case", sorted(MALFORMED))
def test_dataset_validators(tmp_path, capsys, case):
    path = tmp_path / "bad.jsonl"
    path.write_text("".join(json.dumps(o) + "\n" for o in MALFORMED[case]))
    code = main(["train", "--data", str(path), "--model-out", str(tmp_path / "m.jsonl"), "--k", "1"])
    err = capsys.readouterr().err
    expected_line = 1 if case == "missing header" else 3
    report("criterion 9", case=case, exit_code=code, message=err.strip())
    assert code == 4
    assert f"bad.jsonl:{expected_line}:" in err
    assert not (tmp_path / "m.jsonl").exists()


@pytest.mark.criterion(9, "CLI round trip is bit-exact and validators use the exit codes")
def test_other_exit_codes(tmp_path):
    good = tmp_path / "good.jsonl"
    good.write_text("".join(json.dumps(o) + "\n" for o in [_header()] + [_good(i) for i in range(6)]))
    model = tmp_path / "m.jsonl"
    assert main(["train", "--data", str(good), "--model-out", str(model), "--k", "2", "--T", "3"]) == 0
    out = str(tmp_path / "out")
    codes = {}
    # query dimension differs from the model
    q3 = tmp_path / "q3.jsonl"
    q3.write_text(json.dumps(_header(3)) + "\n" + json.dumps(_good(0, 3)) + "\n")
    codes["predict d mismatch"] = (main(["predict", "--model", str(model), "--data", str(q3), "--out", out]), 4)
    # a model file missing one weight record
    broken = tmp_path / "broken.jsonl"
    broken.write_text("".join(ln + "\n" for ln in model.read_text().splitlines() if '"i": 4, "w"' not in ln))
    codes["model missing record"] = (main(["predict", "--model", str(broken), "--data", str(good), "--out", out]), 4)
    codes["missing input file"] = (main(["train", "--data", str(tmp_path / "absent"), "--model-out", out]), 3)
    codes["unknown sweep param"] = (main(["sweep", "--data", str(good), "--param", "eta", "--values", "1", "--out", out]), 2)
    codes["eta*C >= 1"] = (main(["train", "--data", str(good), "--model-out", out, "--eta", "1", "--C", "1"]), 2)
    huge = tmp_path / "huge.jsonl"
    huge.write_text("".join(json.dumps(o) + "\n" for o in [_header()] + [
        {"id": str(i), "features": [1.7e308, 1.7e308], "output": 0} for i in range(6)]))
    with np.errstate(all="ignore"):
        codes["diverging weights"] = (main(["train", "--data", str(huge), "--model-out", out,
                                            "--k", "3", "--T", "3"]), 5)
    report("criterion 9", exit_codes={k: v[0] for k, v in codes.items()})
    assert all(got == want for got, want in codes.values()), codes


# -- 10 -------------------------------------------------------------------------------

@pytest.mark.criterion(10, "sequence task beats the majority-sequence baseline by 0.10")
@pytest.mark.slow
def test_sequence_task():
    ds = generate_synthetic(SyntheticSpec("sequence", 120, 12, noise=0.3, seed=0))
    assert ds.desc == TagSequence(3, 4)
    protocol = Protocol(folds=10, labeled_fraction=0.3)
    start = time.perf_counter()
    rep = run_experiment(ds, TrainConfig(k=10), protocol, metric=LossKind.ZERO_ONE)
    elapsed = time.perf_counter() - start
    majority = run_majority_baseline(ds, protocol, metric=LossKind.ZERO_ONE)
    report("criterion 10", sslsop=rep.mean_loss, majority=majority.mean_loss,
           margin=majority.mean_loss - rep.mean_loss, seconds=round(elapsed, 2))
    assert rep.mean_loss <= majority.mean_loss - 0.10
    assert elapsed < 120
