"""Command-line pipeline: gen, train, eval, embed, curve and explain.

Exit status is 0 on success, 2 for usage or input/config errors and 3 for
runtime or numeric failures. Classes and channels are 1-based.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import baselines, dataset, embedding, lrp, manipulation, mlp, report

log = logging.getLogger("csix")

EXIT_USAGE = 2
EXIT_RUNTIME = 3

_INPUT_ERRORS = (
    dataset.DatasetError, mlp.ModelError, lrp.RelevanceError, manipulation.ExperimentError,
    baselines.BaselineError, FileNotFoundError, IsADirectoryError, PermissionError,
)
_RUNTIME_ERRORS = (
    mlp.TrainingDiverged, baselines.SvmNotConverged, embedding.EmbeddingError,
    FloatingPointError, ArithmeticError, np.linalg.LinAlgError,
)


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError("layer sizes must be positive")
    return vals


def _write(path, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------- commands

def cmd_gen(args) -> int:
    cfg = dataset.SynthConfig.from_json(args.config) if args.config else dataset.SynthConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    train, test = dataset.generate_synthetic(cfg)
    if args.minmax:
        train, test = dataset.minmax_scale(train, test)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset.save_csv(train, out / "train.csv")
    dataset.save_csv(test, out / "test.csv")
    counts_tr = dataset.per_class_counts(train)
    counts_te = dataset.per_class_counts(test)
    print("location,train,test")
    for m in range(1, cfg.M + 1):
        print(f"{m},{counts_tr.get(m, 0)},{counts_te.get(m, 0)}")
    return 0


def cmd_train(args) -> int:
    train = dataset.load_csv(args.train, S=args.subcarriers)
    dims = [train.K, *args.hidden, train.M]
    params = mlp.init_random(dims, args.seed, args.init)
    cfg = mlp.TrainConfig(
        backprop_iters=args.iters, pretrain_iters=args.pretrain, learning_rate=args.lr,
        pretrain_learning_rate=args.pretrain_lr, batch_size=args.batch_size, seed=args.seed,
        init=args.init,
    )
    trained, history = mlp.train(params, train, cfg)
    Path(args.model_out).parent.mkdir(parents=True, exist_ok=True)
    mlp.save_model(trained, args.model_out)
    loss_path = args.loss_out or str(Path(args.model_out).with_suffix(".loss.csv"))
    lines = ["iteration,loss"] + [f"{i},{v:.17g}" for i, v in enumerate(history, start=1)]
    _write(loss_path, "\n".join(lines) + "\n")
    acc = float(np.mean(mlp.predict_batch(trained, train.X) == train.labels))
    print(f"trained {dims} for {args.iters} iterations; training accuracy {100 * acc:.2f}%")
    return 0


def _parse_baseline(spec: str) -> tuple[str, dict]:
    name, _, rest = spec.partition(":")
    opts = {}
    for item in filter(None, rest.split(",")):
        key, eq, val = item.partition("=")
        if not eq:
            raise UsageError(f"baseline option {item!r} must look like key=value")
        try:
            opts[key.strip()] = float(val)
        except ValueError:
            raise UsageError(f"baseline option {item!r} is not numeric") from None
    if name not in ("knn", "svm"):
        raise UsageError(f"unknown baseline {name!r}; use knn or svm")
    allowed = {"knn": {"k"}, "svm": {"gamma", "C"}}[name]
    if set(opts) - allowed:
        raise UsageError(f"baseline {name} accepts only {sorted(allowed)}")
    return name, opts


def cmd_eval(args) -> int:
    params = mlp.load_model(args.model)
    test = dataset.load_csv(args.test, S=args.subcarriers, M=params.n_classes)
    M = params.n_classes
    specs = [_parse_baseline(s) for s in args.baseline]
    if specs and not args.train:
        raise UsageError("baselines need --train")
    blocks = [baselines.scheme_report("DNN", baselines.confusion(mlp.predict_batch(params, test.X), test.labels, M))]
    train = dataset.load_csv(args.train, S=args.subcarriers, M=M) if specs else None
    for name, opts in specs:
        if name == "knn":
            k = int(opts.get("k", 5))
            pred = baselines.knn_predict_batch(train, test.X, k)
            label = f"k-NN (k={k})"
        else:
            model = baselines.svm_train(train, gamma=opts.get("gamma"), C=opts.get("C", 1.0))
            pred = baselines.svm_predict_batch(model, test.X)
            label = "SVM"
        blocks.append(baselines.scheme_report(label, baselines.confusion(pred, test.labels, M)))
    baselines.save_report(blocks, args.report_out)
    sys.stdout.write(baselines.format_table(blocks))
    return 0


def cmd_embed(args) -> int:
    sets = [dataset.load_csv(p, S=args.subcarriers) for p in args.data]
    data = sets[0]
    for extra in sets[1:]:
        data = data.concat(extra)
    if args.layer == "last-hidden":
        if not args.model:
            raise UsageError("--layer last-hidden needs --model")
        feats = embedding.extract_last_hidden(mlp.load_model(args.model), data)
    else:
        feats = data.X
    cfg = embedding.TsneConfig(perplexity=args.perplexity, iters=args.iters, seed=args.seed)
    emb = embedding.tsne(feats, labels=data.labels, split=data.splits, config=cfg)
    mask = emb.mask(args.silhouette_on)
    score = embedding.silhouette(emb.points, emb.labels, mask) if mask.any() else None
    emb.to_csv(args.csv)
    _write(args.svg, report.render_scatter(emb, args.silhouette_on, score, title=args.title or ""))
    shown = "n/a" if score is None else f"{score:.4f}"
    print(f"embedded {len(data)} samples; KL {emb.initial_kl:.4f} -> {emb.final_kl:.4f}; "
          f"silhouette ({args.silhouette_on}) {shown}")
    return 0


def cmd_curve(args) -> int:
    if args.mode == "modify" and not args.stats_from:
        raise UsageError("--mode modify needs --stats-from TRAIN_CSV")
    params = mlp.load_model(args.model)
    test = dataset.load_csv(args.test, S=args.subcarriers, M=params.n_classes)
    stats = None
    if args.stats_from:
        stats = dataset.class_stats(dataset.load_csv(args.stats_from, S=args.subcarriers, M=params.n_classes))
    target = args.target if args.target is not None else args.true
    curve = manipulation.progressive_curve(
        params, test, args.true, target, args.kind, args.mode, stats, args.granularity,
        order_source=args.order_source,
    )
    Path(args.csv).parent.mkdir(parents=True, exist_ok=True)
    curve.to_csv(args.csv)
    _write(args.svg, report.render_curve([curve], title=args.title or curve.label))
    print(f"{curve.label}: t=0 {100 * curve.frac_true[0]:.1f}% -> t={int(curve.t[-1])} "
          f"{100 * curve.frac_true[-1]:.1f}% as p{args.true}, {100 * curve.frac_target[-1]:.1f}% as p{target}; "
          f"AUC {curve.auc():.4f}")
    return 0


def cmd_explain(args) -> int:
    params = mlp.load_model(args.model)
    data = dataset.load_csv(args.data, S=args.subcarriers, M=params.n_classes)
    subset = data.subset(location_id=args.true)
    if len(subset) == 0:
        raise UsageError(f"no samples of class {args.true} in {args.data}")
    X = subset.X[: args.limit] if args.limit else subset.X
    target = args.target if args.target is not None else args.true
    maps = [lrp.explain(params, x, args.true, target) for x in X]
    H = np.array([rm.h_prime for rm in maps])
    lrp.save_relevance(maps, args.json, data.S, data.A)
    if args.subcarrier:
        svg = report.render_subcarrier_heatmaps(X, H, (args.true, target), data.S, data.A, args.title or "")
    else:
        svg = report.render_heatmap(X, H, (args.true, target), args.title or "")
    _write(args.svg, svg)
    print(f"explained {len(maps)} samples of p{args.true} for p{target}")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="csix", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging to stderr")
    p.add_argument("--subcarriers", type=int, default=30, metavar="S",
                   help="subcarriers per antenna pair in CSV inputs (default 30)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate synthetic train/test CSV files")
    g.add_argument("--config", help="SynthConfig JSON (defaults if omitted)")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=int, help="override the config seed")
    g.add_argument("--minmax", action="store_true", help="min-max scale with training-set ranges")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train the DNN")
    t.add_argument("--train", required=True)
    t.add_argument("--model-out", required=True)
    t.add_argument("--loss-out", help="loss CSV (default: next to the model)")
    t.add_argument("--hidden", type=_int_list, default=[300, 280, 260])
    t.add_argument("--iters", type=int, default=1500, help="backprop epochs")
    t.add_argument("--pretrain", type=int, default=30, help="autoencoder epochs per hidden layer")
    t.add_argument("--lr", type=float, default=0.01)
    t.add_argument("--pretrain-lr", type=float, default=1e-4)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--init", choices=["scaled", "gaussian_unit"], default="scaled")
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="precision/recall report for the DNN and baselines")
    e.add_argument("--model", required=True)
    e.add_argument("--test", required=True)
    e.add_argument("--train", help="training CSV, needed by baselines")
    e.add_argument("--baseline", action="append", default=[],
                   help="knn[:k=5] or svm[:gamma=G,C=1]; repeatable")
    e.add_argument("--report-out", required=True)
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("embed", help="t-SNE scatterplot of inputs or last hidden activations")
    m.add_argument("--data", action="append", required=True, help="CSV file; repeat to combine splits")
    m.add_argument("--model")
    m.add_argument("--layer", choices=["input", "last-hidden"], default="last-hidden")
    m.add_argument("--perplexity", type=float, default=30.0)
    m.add_argument("--iters", type=int, default=1000)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--silhouette-on", choices=["train", "test"], default="train")
    m.add_argument("--svg", required=True)
    m.add_argument("--csv", required=True)
    m.add_argument("--title")
    m.set_defaults(func=cmd_embed)

    c = sub.add_parser("curve", help="progressive nullification or modification curve")
    c.add_argument("--model", required=True)
    c.add_argument("--test", required=True)
    c.add_argument("--true", type=int, required=True, help="true class n")
    c.add_argument("--target", type=int, help="target class m (default n)")
    c.add_argument("--kind", choices=list(manipulation.KINDS), default="O3")
    c.add_argument("--mode", choices=list(manipulation.MODES), default="nullify")
    c.add_argument("--granularity", choices=list(manipulation.GRANULARITIES), default="channel")
    c.add_argument("--order-source", choices=["sample", "class_mean"], default="sample")
    c.add_argument("--stats-from", help="training CSV for class statistics (modify mode)")
    c.add_argument("--csv", required=True)
    c.add_argument("--svg", required=True)
    c.add_argument("--title")
    c.set_defaults(func=cmd_curve)

    x = sub.add_parser("explain", help="relevance heatmap and JSON for one class pair")
    x.add_argument("--model", required=True)
    x.add_argument("--data", required=True)
    x.add_argument("--true", type=int, required=True)
    x.add_argument("--target", type=int)
    x.add_argument("--limit", type=int, default=0, help="explain only the first N samples")
    x.add_argument("--subcarrier", action="store_true", help="one panel per antenna pair")
    x.add_argument("--svg", required=True)
    x.add_argument("--json", required=True)
    x.add_argument("--title")
    x.set_defaults(func=cmd_explain)
    return p


def _thread_limit():
    raw = os.environ.get("CSIX_THREADS")
    if not raw:
        return contextlib.nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"CSIX_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("CSIX_THREADS must be at least 1")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            return args.func(args)
    except UsageError as exc:
        print(f"csix {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _INPUT_ERRORS as exc:
        print(f"csix {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _RUNTIME_ERRORS as exc:
        print(f"csix {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, json.JSONDecodeError) as exc:
        print(f"csix {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
