"""Exit criteria. Each test records one PASS/FAIL line shown in the terminal summary."""

import json
import re
import time

import numpy as np
import pytest

from textcnn import _core, persistence
from textcnn.cli import gradcheck_setup, run
from textcnn.evaluation import class_metrics, confusion, macro_report
from textcnn.model import PAPER_CONFIG, forward, global_max_pool, init_params, conv_forward, predict, softmax
from textcnn.synthdata import SynthSpec, generate
from textcnn.training import grad_check_report, max_relative_error

from conftest import ACCEPTANCE_LINES
from oracles import conv_double_sum, max_and_first_argmax, metrics_from_counts, recount


def record(name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_gradient_oracle():
    t0 = time.perf_counter()
    worst = fc_worst = 0.0
    min_coords = None
    groups_ok = True
    for seed in (0, 7):
        params, batch = gradcheck_setup(seed)
        assert params.config.embedding_dim == 32 and params.config.heights == (2, 3, 4)
        assert params.config.kernels_per_height == 16 and params.config.num_classes == 6
        rep = grad_check_report(params, batch, eps=1e-5, l2_coeff=1e-4, seed=seed)
        n = sum(len(rows) for rows in rep["groups"].values())
        min_coords = n if min_coords is None else min(min_coords, n)
        groups_ok &= all(len(rows) > 0 for rows in rep["groups"].values())
        worst = max(worst, max_relative_error(rep))
        fc_worst = max(fc_worst, max_relative_error(rep, "fc."))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and fc_worst < 1e-6 and min_coords >= 200 and groups_ok and elapsed < 30
    record("gradient oracle", ok,
           f"max rel err {worst:.2e} (<1e-4), fc path {fc_worst:.2e} (<1e-6), "
           f"{min_coords} coords/run, all groups covered={groups_ok}, {elapsed:.1f}s (<30s)")


@pytest.mark.parametrize("backend_name", _core.available_backends())
def test_brute_force_equivalence(backend_name):
    prev = _core.use_backend(backend_name)
    try:
        rng = np.random.default_rng(2024)
        worst = 0.0
        pool_ok = True
        for _ in range(100):
            N = int(rng.integers(1, 9))
            D = int(rng.integers(1, 5))
            H = int(rng.integers(1, min(3, N) + 1))
            X, W, b = rng.normal(size=(N, D)), rng.normal(size=(H, D)), float(rng.normal())
            pre, post = conv_forward(X, W, b)
            ref = conv_double_sum(X.tolist(), W.tolist(), b)
            worst = max(worst, float(np.max(np.abs(pre - ref))))
            pool_ok &= global_max_pool(post) == max_and_first_argmax(post.tolist())
            pool_ok &= global_max_pool(pre) == max_and_first_argmax(pre.tolist())
    finally:
        _core.use_backend(prev)
    record(f"brute-force equivalence [{backend_name}]", worst <= 1e-12 and pool_ok,
           f"max |conv - double sum| {worst:.1e} (<=1e-12) over 100 instances, pooling exact={pool_ok}")


def test_metric_oracle():
    rng = np.random.default_rng(99)
    mismatches = identity_failures = 0
    for _ in range(1000):
        L = int(rng.integers(2, 8))
        n = int(rng.integers(1, 80))
        labels = rng.integers(0, L, size=n).tolist()
        preds = rng.integers(0, L, size=n).tolist()
        cm = confusion(preds, labels, L)
        rep = macro_report(cm)
        per = []
        for c in range(L):
            expected = metrics_from_counts(*recount(labels, preds, c))
            per.append(expected)
            mismatches += tuple(class_metrics(cm, c)) != expected
        macro = tuple(sum(m[i] for m in per) / L for i in range(4))
        mismatches += any(abs(a - b) > 0 for a, b in zip(rep.macro, macro))
        micro_recall = sum(recount(labels, preds, c)[0] for c in range(L)) / n
        identity_failures += micro_recall != rep.overall_accuracy
        identity_failures += rep.overall_accuracy != sum(t == p for t, p in zip(labels, preds)) / n
    record("metric oracle", mismatches == 0 and identity_failures == 0,
           f"1000 random instances, {mismatches} metric mismatches, {identity_failures} micro-recall identity failures")


@pytest.fixture(scope="module")
def two_runs(tmp_path_factory):
    d = tmp_path_factory.mktemp("e2e")
    generate(SynthSpec(seed=42), d / "data")
    out = []
    for i in (1, 2):
        cfg = d / "cfg.json"
        cfg.write_text(json.dumps({"epochs": 20, "seed": 42}))
        t0 = time.perf_counter()
        assert run(["train", "--desk", "--data", str(d / "data/train.jsonl"), "--config", str(cfg),
                    "--out", str(d / f"m{i}.tcnn")]) == 0
        assert run(["evaluate", "--model", str(d / f"m{i}.tcnn"), "--data", str(d / "data/test.jsonl"),
                    "--json", str(d / f"metrics{i}.json")]) == 0
        out.append((d / f"m{i}.tcnn", d / f"metrics{i}.json", time.perf_counter() - t0))
    return d, out


def test_end_to_end_learning(two_runs):
    d, runs = two_runs
    model_path, metrics_path, elapsed = runs[0]
    metrics = json.loads(metrics_path.read_text())
    # retrain in-process to read the loss history
    from textcnn.text import load_dataset
    from textcnn.training import train
    bundle = persistence.load(model_path)
    records, _, _ = load_dataset(d / "data/train.jsonl", bundle.vocab, bundle.label_map, seq_len=40)
    params, history = train(records, bundle.train_config, len(bundle.vocab))
    assert params.fc_weight.tobytes() == bundle.params.fc_weight.tobytes()
    ratio = history.losses[-1] / history.losses[0]
    f1, acc = metrics["macro"]["f1"], metrics["overall_accuracy"]
    ok = f1 >= 0.95 and acc >= 0.95 and ratio < 0.5 and elapsed < 120
    record("end-to-end learning", ok,
           f"held-out macro-F1 {f1:.4f} (>=0.95), accuracy {acc:.4f} (>=0.95), "
           f"final/first epoch loss {ratio:.4f} (<0.5), train+evaluate {elapsed:.1f}s (<120s)")


def test_shape_fidelity():
    p = init_params(PAPER_CONFIG, 100, 0)
    F = forward(np.zeros(130, dtype=int), p).features
    ok = F.shape == (384,) and p.fc_weight.shape == (384, 6)
    record("shape fidelity", ok, f"feature length {F.shape[0]} (384), fc_weight {p.fc_weight.shape} ((384, 6))")


def test_softmax_normalization():
    rng = np.random.default_rng(7)
    worst = 0.0
    finite = True
    for i in range(10_000):
        L = int(rng.integers(1, 12))
        scale = 1000.0 if i % 2 else float(rng.uniform(0.1, 50))
        y = rng.uniform(-scale, scale, size=L)
        if i % 5 == 0:
            y[0] = 1000.0 * rng.choice([-1, 1])
        P = softmax(y)
        finite &= bool(np.all(np.isfinite(P)))
        worst = max(worst, abs(P.sum() - 1))
    record("softmax normalization", worst < 1e-12 and finite,
           f"max |sum P - 1| {worst:.1e} (<1e-12) over 10^4 vectors incl. |y|=1000, all finite={finite}")


def test_determinism(two_runs):
    _, runs = two_runs
    (m1, j1, _), (m2, j2, _) = runs
    same_model = m1.read_bytes() == m2.read_bytes()
    a, b = json.loads(j1.read_text()), json.loads(j2.read_text())
    a.pop("latency"), b.pop("latency")
    record("determinism", same_model and a == b,
           f"model files identical={same_model}, metrics JSON identical (latency excluded)={a == b}")


def test_persistence(two_runs, tmp_path):
    _, runs = two_runs
    bundle = persistence.load(runs[0][0])
    persistence.save(bundle, tmp_path / "again.tcnn")
    bit_exact = (tmp_path / "again.tcnn").read_bytes() == runs[0][0].read_bytes()
    loaded = persistence.load(tmp_path / "again.tcnn")
    bit_exact &= all(x.tobytes() == y.tobytes() for x, y in zip(bundle.params.arrays(), loaded.params.arrays()))
    rng = np.random.default_rng(5)
    vocab = list(bundle.vocab.tokens[2:]) + ["unseen", "words"]
    same = 0
    for _ in range(100):
        text = " ".join(rng.choice(vocab, size=int(rng.integers(0, 70))))
        la, pa = predict(text, bundle.params, bundle.vocab, bundle.label_map)
        lb, pb = predict(text, loaded.params, loaded.vocab, loaded.label_map)
        same += la == lb and pa.tobytes() == pb.tobytes()
    record("persistence", bit_exact and same == 100,
           f"save/load bit-exact={bit_exact}, identical predictions on {same}/100 random inputs")


def test_latency_facility(two_runs, capsys):
    d, runs = two_runs
    capsys.readouterr()
    assert run(["evaluate", "--model", str(runs[0][0]), "--data", str(d / "data/test.jsonl")]) == 0
    out = capsys.readouterr().out
    m = re.search(r"(\d+\.\d{2}) ± (\d+\.\d{2}) ms", out)
    record("latency facility", m is not None,
           f"evaluate printed '{m.group(0)}' per record (reported, not gated)" if m else "no latency line")
