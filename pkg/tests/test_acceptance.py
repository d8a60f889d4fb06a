"""End-to-end acceptance checks on the default synthetic set and the default-sized network.

The session fixture runs the desk-scale pipeline once (generate, train 1500
epochs, evaluate, one embedding, two curves) under a timer; later criteria
reuse its model and data.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from csix import baselines as B
from csix import dataset as D
from csix import embedding as E
from csix import lrp
from csix import manipulation as X
from csix import mlp
from csix import report as R
from csix.cli import main as cli_main

M = 8
DIMS = [120, *mlp.DEFAULT_HIDDEN, M]
MOD_PAIRS = [(1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (7, 8), (8, 1)]


@pytest.fixture(scope="session")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("pipeline")
    t0 = time.perf_counter()
    train, test = D.generate_synthetic(D.SynthConfig())
    D.save_csv(train, out / "train.csv")
    D.save_csv(test, out / "test.csv")
    params, loss = mlp.train(mlp.init_random(DIMS, 0), train, mlp.TrainConfig())
    mlp.save_model(params, out / "model.json")
    cm = B.confusion(mlp.predict_batch(params, test.X), test.labels, M)
    knn_cm = B.confusion(B.knn_predict_batch(train, test.X, 5), test.labels, M)
    B.save_report([B.scheme_report("DNN", cm), B.scheme_report("k-NN (k=5)", knn_cm)], out / "report.json")
    both = train.concat(test)
    emb = E.tsne(E.extract_last_hidden(params, both), labels=both.labels, split=both.splits)
    sil = E.silhouette(emb.points, emb.labels, emb.mask("train"))
    R.write_svg(R.render_scatter(emb, silhouette=sil), out / "embed.svg")
    curves = [X.progressive_curve(params, test, 1, 1, "O3"),
              X.progressive_curve(params, test, 1, 2, "O2", "modify", D.class_stats(train))]
    for i, c in enumerate(curves):
        c.to_csv(out / f"curve{i}.csv")
        R.write_svg(R.render_curve([c]), out / f"curve{i}.svg")
    elapsed = time.perf_counter() - t0
    return dict(train=train, test=test, params=params, cm=cm, knn_cm=knn_cm, both=both,
                emb=emb, sil=sil, elapsed=elapsed)


def test_criterion_01_gradient_correctness(record):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = 0.0
    for seed in range(5):
        p = mlp.init_random([4, 5, 4, 3], seed, "gaussian_unit")
        p.biases = [rng.normal(size=b.shape) for b in p.biases]
        worst = max(worst, mlp.gradient_check(p, rng.uniform(0, 2, 4), int(rng.integers(1, 4)), 1e-5))
    dt = time.perf_counter() - t0
    ok = worst < 1e-4 and dt < 5
    record(1, ok, f"max relative gradient error {worst:.2e} (< 1e-4), {dt:.2f}s (< 5s)")
    assert ok


def test_criterion_02_lrp_conservation(pipeline, record):
    params = pipeline["params"].zero_biases()
    test = pipeline["test"]
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        i = int(rng.integers(len(test)))
        m = int(rng.integers(1, M + 1))
        rm = lrp.explain(params, test.X[i], int(test.labels[i]), m)
        worst = max(worst, abs(rm.h.sum() - rm.z_out) / abs(rm.z_out))
    ok = worst < 1e-6
    record(2, ok, f"max relative conservation gap {worst:.2e} over 100 (sample, m) pairs (< 1e-6)")
    assert ok


def test_criterion_03_normalization(pipeline, record):
    params, test = pipeline["params"], pipeline["test"]
    S, A = test.S, test.A
    bad_peak = bad_range = 0
    worst = 0.0
    count = 0
    for n in range(1, M + 1):
        Xn = test.subset(location_id=n).X
        for m in (n, n % M + 1):
            for x in Xn:
                hp = lrp.explain(params, x, n, m).h_prime
                count += 1
                peak = np.max(np.abs(hp))
                bad_peak += not (peak == 1.0 or not np.any(hp))
                bad_range += not np.all((hp >= -1) & (hp <= 1))
                s = lrp.subcarrier_scores(hp, S, A).values
                for i in range(S):
                    ref = sum(hp[a * S + i] for a in range(A)) / A
                    worst = max(worst, abs(s[i] - ref))
    ok = bad_peak == 0 and bad_range == 0 and worst <= 1e-12
    record(3, ok, f"{count} maps: {bad_peak} bad peaks, {bad_range} out of range, "
                  f"subcarrier score error {worst:.1e} (<= 1e-12)")
    assert ok


def test_criterion_04_nullification_trend(pipeline, record):
    params, test = pipeline["params"], pipeline["test"]
    acc = pipeline["cm"].accuracy()
    t0 = time.perf_counter()
    quarter = test.K // 4
    fracs, auc_ok = [], []
    for n in range(1, M + 1):
        c3 = X.progressive_curve(params, test, n, n, "O3")
        c4 = X.progressive_curve(params, test, n, n, "O4")
        fracs.append(float(c3.frac_true[quarter]))
        auc_ok.append(c3.auc() <= c4.auc())
    dt = time.perf_counter() - t0
    ok = acc >= 0.9 and max(fracs) < 0.3 and all(auc_ok) and dt < 120
    record(4, ok, f"accuracy {acc:.3f}; frac_true after top-25% O3 nullification "
                  f"{[round(f, 2) for f in fracs]} (each < 0.3); AUC(O3) <= AUC(O4) for "
                  f"{sum(auc_ok)}/{M} classes; {dt:.1f}s")
    assert ok


def test_criterion_05_modification_trend(pipeline, record):
    params, train, test = pipeline["params"], pipeline["train"], pipeline["test"]
    stats = D.class_stats(train)
    hits = []
    for n, m in MOD_PAIRS:
        c = X.progressive_curve(params, test, n, m, "O2", "modify", stats)
        hits.append(c.frac_true[-1] <= 0.1 and c.frac_target[-1] >= 0.8)
    ok = sum(hits) >= 6
    record(5, ok, f"{sum(hits)}/8 pairs reach frac_true <= 0.1 and frac_target >= 0.8 (need 6); "
                  f"failing {[p for p, h in zip(MOD_PAIRS, hits) if not h]}")
    assert ok


def test_criterion_06_clustering_direction(pipeline, record):
    both, emb = pipeline["both"], pipeline["emb"]
    mask = emb.mask("train")
    raw = E.tsne(both.X, labels=both.labels, split=both.splits)
    untrained = mlp.init_random(DIMS, 0, "gaussian_unit")
    unt = E.tsne(E.extract_last_hidden(untrained, both), labels=both.labels, split=both.splits)
    s_tr = pipeline["sil"]
    s_raw = E.silhouette(raw.points, both.labels, mask)
    s_unt = E.silhouette(unt.points, both.labels, mask)
    kl_ok = all(e.final_kl < e.initial_kl for e in (emb, raw, unt))
    ok = s_tr - s_raw >= 0.1 and s_tr > s_unt and kl_ok
    record(6, ok, f"silhouette trained {s_tr:.3f}, raw {s_raw:.3f} (gap >= 0.1), untrained {s_unt:.3f}; "
                  f"KL decreased in all runs: {kl_ok}")
    assert ok


def test_criterion_07_baseline_sanity(pipeline, record):
    train, test = pipeline["train"], pipeline["test"]
    dnn = B.precision_recall(pipeline["cm"]).macro_recall
    knn = B.precision_recall(pipeline["knn_cm"]).macro_recall
    Xtr, ytr = train.X, train.labels
    mismatches = 0
    got = B.knn_predict_batch(train, test.X, 5)
    for q, g in zip(test.X, got):
        d = [float(np.sum((row - q) ** 2)) for row in Xtr]
        order = sorted(range(len(d)), key=lambda i: (d[i], i))[:5]
        votes = {}
        for rank, i in enumerate(order):
            cnt, first = votes.get(int(ytr[i]), (0, rank))
            votes[int(ytr[i])] = (cnt + 1, first)
        mismatches += g != min(votes, key=lambda c: (-votes[c][0], votes[c][1]))
    svm = B.svm_train(train, tol=1e-3)
    kkt = max(B.kkt_violation(svm))
    ok = 100 * dnn >= 100 * knn - 2 and mismatches == 0 and kkt <= 1e-3
    record(7, ok, f"macro recall DNN {100 * dnn:.2f}% vs k-NN {100 * knn:.2f}% (within 2 points); "
                  f"k-NN oracle mismatches {mismatches}; SVM max KKT violation {kkt:.1e} (<= 1e-3)")
    assert ok


def _brute_silhouette(P, labels):
    N = len(P)
    vals = []
    for i in range(N):
        dist = {}
        for j in range(N):
            if j != i:
                dist.setdefault(labels[j], []).append(float(np.hypot(*(P[i] - P[j]))))
        own = dist.get(labels[i], [])
        if not own:
            vals.append(0.0)
            continue
        a = sum(own) / len(own)
        b = min(sum(v) / len(v) for c, v in dist.items() if c != labels[i])
        vals.append(0.0 if max(a, b) == 0 else (b - a) / max(a, b))
    return sum(vals) / N


def test_criterion_08_silhouette_oracle(record):
    fixture = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]])
    s = E.silhouette(fixture, [1, 1, 2, 2])
    rng = np.random.default_rng(8)
    worst = 0.0
    for N in (5, 50, 120, 200):
        P = rng.normal(size=(N, 2)) * 3
        labels = rng.integers(1, 5, N)
        worst = max(worst, abs(E.silhouette(P, labels) - _brute_silhouette(P, labels)))
    ok = abs(s - 0.900) <= 0.001 and worst <= 1e-12
    record(8, ok, f"two-cluster fixture {s:.4f} (0.900 +- 0.001); brute-force gap {worst:.1e} (<= 1e-12)")
    assert ok


def _cli_run(root: Path):
    root.mkdir()
    data = root / "data"
    steps = [
        ["gen", "--out", data],
        ["train", "--train", data / "train.csv", "--model-out", root / "model.json", "--iters", 30,
         "--pretrain", 2, "--seed", 0],
        ["eval", "--model", root / "model.json", "--test", data / "test.csv", "--train", data / "train.csv",
         "--baseline", "knn:k=5", "--baseline", "svm", "--report-out", root / "report.json"],
        ["curve", "--model", root / "model.json", "--test", data / "test.csv", "--true", 3, "--kind", "O3",
         "--csv", root / "null.csv", "--svg", root / "null.svg"],
        ["curve", "--model", root / "model.json", "--test", data / "test.csv", "--true", 3, "--target", 4,
         "--kind", "O2", "--mode", "modify", "--stats-from", data / "train.csv",
         "--csv", root / "mod.csv", "--svg", root / "mod.svg"],
    ]
    codes = [cli_main([str(a) for a in step]) for step in steps]
    return codes, {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_09_determinism(tmp_path, record):
    codes_a, files_a = _cli_run(tmp_path / "a")
    codes_b, files_b = _cli_run(tmp_path / "b")
    kinds = sorted({p.suffix for p in files_a})
    same = files_a.keys() == files_b.keys() and all(files_a[k] == files_b[k] for k in files_a)
    ok = codes_a == codes_b == [0] * 5 and same and {".csv", ".json", ".svg"} <= set(kinds)
    record(9, ok, f"{len(files_a)} outputs ({', '.join(kinds)}) byte-identical across reruns: {same}")
    assert ok


def test_criterion_10_desk_scale_runtime(pipeline, record):
    dt = pipeline["elapsed"]
    ok = dt < 300
    record(10, ok, f"generate + train 1500 epochs + evaluate + embedding + two curves in {dt:.0f}s (< 300s)")
    assert ok


def test_default_model_accuracy(pipeline):
    # the trained network is the premise of criteria 2-7
    dnn = pipeline["cm"].accuracy()
    knn = pipeline["knn_cm"].accuracy()
    assert dnn >= 0.9 and dnn >= knn - 0.05
