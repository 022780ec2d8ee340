"""Exit criteria for the package, one test per criterion.

Each test records a PASS/FAIL line that is printed in the pytest terminal
summary under "acceptance criteria".
"""

import itertools
import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from conftest import ACCEPTANCE_RESULTS
from amazon_landcover.analysis import cooccurrence, label_distribution
from amazon_landcover.cli import main
from amazon_landcover.labels import (
    DatasetManifest,
    SampleRecord,
    decode_vector,
    default_catalog,
    encode_tags,
    load_manifest,
    split_train_val,
)
from amazon_landcover.losses import binary_cross_entropy, categorical_cross_entropy, dense_head_gradients, dense_head_loss
from amazon_landcover.metrics import evaluate
from amazon_landcover.model import Classifier, build_classifier, init_weights
from amazon_landcover.training import TrainingHistory, torch_bce

LAPTOP_CORES = 4


def record(key, ok, detail=""):
    ACCEPTANCE_RESULTS[key] = ("PASS" if ok else "FAIL", detail)
    assert ok, detail


# ---------------------------------------------------------------------------
# 1


def test_criterion_1_table_architecture():
    t0 = time.perf_counter()
    spec = build_classifier(128, 17)
    got = [(l.output_shape, l.param_count) for l in spec.layers]
    want = [((128, 128, 3), 0), ((128, 128, 3), 12), ((4, 4, 512), 14714688), ((8192,), 0), ((17,), 139281)]
    elapsed = time.perf_counter() - t0
    ok = got == want and spec.total_params == 14853981 and elapsed < 1.0
    record("1 (Table I architecture)", ok, f"total={spec.total_params:,} in {elapsed * 1e3:.1f} ms")


# ---------------------------------------------------------------------------
# 2


def naive_scores(y, probs, threshold, beta, form):
    """Loop-only recomputation of every reported aggregate."""
    n, k = len(y), len(y[0])
    h = [[1 if probs[i][c] >= threshold else 0 for c in range(k)] for i in range(n)]
    w = beta * beta if form == "standard" else beta

    def div(a, b):
        return a / b if b else 0.0

    def scores(tp, fp, tn, fn):
        p = div(tp, tp + fp)
        r = div(tp, tp + fn)
        a = div(tp + tn, tp + fp + tn + fn)
        f = div((1 + w) * p * r, w * p + r)
        return {"precision": p, "recall": r, "accuracy": a, "fbeta": f}

    def count(cells):
        tp = fp = tn = fn = 0
        for i, c in cells:
            if y[i][c] and h[i][c]:
                tp += 1
            elif h[i][c]:
                fp += 1
            elif y[i][c]:
                fn += 1
            else:
                tn += 1
        return tp, fp, tn, fn

    per_class = [scores(*count([(i, c) for i in range(n)])) for c in range(k)]
    per_sample = [scores(*count([(i, c) for c in range(k)])) for i in range(n)]
    micro = scores(*count([(i, c) for i in range(n) for c in range(k)]))
    keys = ("precision", "recall", "accuracy", "fbeta")
    return per_class, {
        "micro": micro,
        "macro": {m: sum(s[m] for s in per_class) / k for m in keys},
        "per_sample_mean": {m: sum(s[m] for s in per_sample) / n for m in keys},
    }


def test_criterion_2_metric_oracle():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 65))
        k = int(rng.integers(1, 18))
        y = (rng.random((n, k)) < rng.uniform(0.05, 0.6)).astype(int)
        probs = rng.random((n, k))
        threshold = float(rng.choice([0.3, 0.5, 0.7]))
        for form, beta in itertools.product(("paper", "standard"), (1.0, 2.0, 3.0)):
            rep = evaluate(y, probs, threshold, beta, form)
            per_class, aggs = naive_scores(y.tolist(), probs.tolist(), threshold, beta, form)
            for c, tag in enumerate(rep.per_class):
                for m, v in per_class[c].items():
                    worst = max(worst, abs(rep.per_class[tag][m] - v))
            for agg, vals in aggs.items():
                for m, v in vals.items():
                    worst = max(worst, abs(rep.aggregates[agg][m] - v))
    elapsed = time.perf_counter() - t0
    record("2 (metric oracle equivalence)", worst <= 1e-9 and elapsed < 10.0,
           f"max abs diff {worst:.2e} over 200 instances x 6 settings, {elapsed:.1f} s")


# ---------------------------------------------------------------------------
# 3


def test_criterion_3_losses():
    rng = np.random.default_rng(3)
    y = (rng.random((9, 17)) < 0.4).astype(float)
    half = abs(binary_cross_entropy(y, np.full_like(y, 0.5)) - math.log(2))
    worst = 0.0
    for _ in range(100):
        n, k = int(rng.integers(1, 33)), int(rng.integers(1, 18))
        yb = (rng.random((n, k)) < 0.3).astype(float)
        p = rng.random((n, k))
        naive = 0.0
        for i in range(n):
            for c in range(k):
                q = min(max(p[i, c], 1e-7), 1 - 1e-7)
                naive += -(yb[i, c] * math.log(q) + (1 - yb[i, c]) * math.log(1 - q))
        worst = max(worst, abs(binary_cross_entropy(yb, p) - naive / (n * k)))
        yc = np.eye(k)[rng.integers(0, k, n)]
        pc = rng.dirichlet(np.ones(k), n)
        naive_c = sum(-yc[i, c] * math.log(max(pc[i, c], 1e-7)) for i in range(n) for c in range(k))
        worst = max(worst, abs(categorical_cross_entropy(yc, pc) - naive_c))
    record("3 (loss correctness)", half <= 1e-9 and worst <= 1e-9,
           f"|BCE(0.5)-ln2|={half:.1e}, max oracle diff {worst:.1e}")


# ---------------------------------------------------------------------------
# 4


def test_criterion_4_gradient_check():
    torch.manual_seed(0)
    rng = np.random.default_rng(4)
    spec = build_classifier(128, 17)
    net = Classifier(spec, init_weights(spec, seed=4))
    net.train()
    x = torch.as_tensor(rng.uniform(0, 255, (2, 128, 128, 3)), dtype=torch.float32)
    y = (rng.random((2, 17)) < 0.3).astype(np.float64)
    with torch.no_grad():
        feats = net.features(x).double().numpy()
    kernel = net.dense.weight.detach().double().numpy().T.copy()
    bias = net.dense.bias.detach().double().numpy().copy()
    p = 1 / (1 + np.exp(-(feats @ kernel + bias)))
    assert np.mean((p > 0.01) & (p < 0.99)) > 0.5, "head saturated; check would be vacuous"

    gk, gb = dense_head_gradients(feats, y, kernel, bias)
    # autograd path used by training
    kt = torch.tensor(kernel, requires_grad=True)
    bt = torch.tensor(bias, requires_grad=True)
    torch_bce(torch.sigmoid(torch.as_tensor(feats) @ kt + bt), torch.as_tensor(y)).backward()

    def rel(a, b):
        return abs(a - b) / max(abs(a), abs(b), 1e-300)

    h = 1e-5
    live = np.flatnonzero(np.abs(feats).sum(axis=0) > 0)
    rows = rng.choice(live, size=min(150, len(live)), replace=False)
    entries = [(int(r), int(c)) for r, c in zip(rows, rng.integers(0, 17, len(rows)))]
    worst = 0.0
    for r, c in entries:
        kp, km = kernel.copy(), kernel.copy()
        kp[r, c] += h
        km[r, c] -= h
        num = (dense_head_loss(feats, y, kp, bias) - dense_head_loss(feats, y, km, bias)) / (2 * h)
        worst = max(worst, rel(gk[r, c], num), rel(float(kt.grad[r, c]), num))
    for c in range(17):
        bp, bm = bias.copy(), bias.copy()
        bp[c] += h
        bm[c] -= h
        num = (dense_head_loss(feats, y, kernel, bp) - dense_head_loss(feats, y, kernel, bm)) / (2 * h)
        worst = max(worst, rel(gb[c], num), rel(float(bt.grad[c]), num))
    record("4 (dense-head gradient check)", worst <= 1e-3,
           f"max relative error {worst:.2e} over {len(entries)} kernel entries + 17 biases")


# ---------------------------------------------------------------------------
# 5


@pytest.mark.slow
def test_criterion_5_end_to_end(tmp_path):
    data, run, ev = tmp_path / "data", tmp_path / "run", tmp_path / "eval"
    t0 = time.perf_counter()
    assert main(["synth", "--output", str(data), "--seed", "7", "--num-samples", "200", "--num-classes", "4"]) == 0
    code = main(["train", "--config", str(data / "dataset.cfg"), "--epochs", "15", "--batch-size", "32",
                 "--seed", "7", "--output", str(run)])
    assert code == 0
    code = main(["evaluate", "--config", str(data / "dataset.cfg"), "--manifest", str(run / "train_manifest.csv"),
                 "--checkpoint", str(run / "checkpoint.npz"), "--output", str(ev)])
    assert code == 0
    elapsed = time.perf_counter() - t0

    hist = TrainingHistory.read_csv(run / "history.csv")
    losses = [r.train_loss for r in hist]
    acc = json.loads((ev / "metrics_report.json").read_text())["elementwise_accuracy"]
    converged = len(hist) == 15 and losses[-1] <= 0.5 * losses[0]
    trend = np.mean(losses[10:15]) < np.mean(losses[0:5])
    cores = os.cpu_count() or 1
    if cores >= LAPTOP_CORES:
        timing_ok, timing = elapsed <= 300, f"{elapsed:.0f} s (budget 300 s)"
    else:
        timing_ok, timing = True, f"{elapsed:.0f} s on {cores} core(s); 300 s laptop budget not checked"
    record("5 (end-to-end synthetic convergence)", converged and trend and acc >= 0.95 and timing_ok,
           f"loss {losses[0]:.4f} -> {losses[-1]:.4f}, train-split accuracy {acc:.4f}, {timing}")


# ---------------------------------------------------------------------------
# 6


def test_criterion_6_analysis_properties():
    rng = np.random.default_rng(6)
    cat = default_catalog()
    tags = np.array(cat.tags)
    records = [SampleRecord(f"c{i}", "", set(rng.choice(tags, int(rng.integers(1, 6)), replace=False)))
               for i in range(300)]
    m = DatasetManifest(tuple(records), cat)
    c = cooccurrence(m)
    diag = np.diag(c.counts)
    sym = np.array_equal(c.counts, c.counts.T) and bool(np.all(c.counts <= np.minimum.outer(diag, diag)))

    roundtrip = True
    for _ in range(1000):
        subset = set(tags[rng.random(17) < rng.random()])
        roundtrip &= decode_vector(encode_tags(subset, cat), cat) == subset

    hundred = DatasetManifest(tuple(SampleRecord(f"s{i}", "", {"primary"}) for i in range(100)), cat)
    train, val = split_train_val(hundred, 0.2, seed=0)
    sizes = (len(train), len(val)) == (80, 20)
    record("6 (analysis properties)", sym and roundtrip and sizes,
           f"symmetric+bounded={sym}, 1000 round-trips exact={roundtrip}, split={len(train)}/{len(val)}")


# ---------------------------------------------------------------------------
# 7


def test_criterion_7_full_scale():
    """Soft targets on the real Planet data, run only when the operator supplies it.

    AMZ_PLANET_MANIFEST: training labels CSV (rank checks).
    AMZ_PLANET_EVAL_MANIFEST + AMZ_PLANET_IMAGES + AMZ_PLANET_CHECKPOINT:
    held-out labels, their chip directory and a trained checkpoint.
    """
    manifest_path = os.environ.get("AMZ_PLANET_MANIFEST")
    if not manifest_path:
        ACCEPTANCE_RESULTS["7 (full-scale reproduction)"] = (
            "SKIP", "needs the 40,479-chip Planet set; set AMZ_PLANET_MANIFEST (see README runbook)")
        pytest.skip("Planet dataset not supplied")
    cat = default_catalog()
    m = load_manifest(manifest_path, cat)
    ranked = [t for t, _ in label_distribution(m).ranked()]
    c = cooccurrence(m)
    p = cat.index("primary")
    ranks_ok = (set(ranked[:3]) == {"primary", "clear", "agriculture"}
                and set(ranked[-3:]) == {"slash_burn", "blow_down", "conventional_mine"}
                and np.count_nonzero(c.counts[p]) >= 15)
    detail = f"top3={ranked[:3]} bottom3={ranked[-3:]}"
    ok = ranks_ok
    ckpt = os.environ.get("AMZ_PLANET_CHECKPOINT")
    eval_manifest = os.environ.get("AMZ_PLANET_EVAL_MANIFEST")
    if ckpt and eval_manifest:
        out = Path(os.environ.get("AMZ_PLANET_OUTPUT", "planet_eval"))
        args = ["evaluate", "--manifest", eval_manifest, "--checkpoint", ckpt, "--output", str(out)]
        if os.environ.get("AMZ_PLANET_IMAGES"):
            args += ["--image-dir", os.environ["AMZ_PLANET_IMAGES"]]
        assert main(args) == 0
        rep = json.loads((out / "metrics_report.json").read_text())
        acc = rep["elementwise_accuracy"]
        f2 = rep["aggregates"]["per_sample_mean"]["fbeta"]
        ok = ok and acc >= 0.95 and abs(f2 - 0.9269) <= 0.03
        detail += f" accuracy={acc:.4f} F2(per-sample)={f2:.4f}"
    record("7 (full-scale reproduction)", ok, detail)
