"""Command-line surface: synth, train, eval, predict, inspect.

Exit codes: 0 success, 2 configuration error, 3 data error,
4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from klrf import data_io, learning, report as report_mod
from klrf.data_io import SynthConfig, load_dataset, load_model, save_dataset, save_model
from klrf.model import ConfigError, DataError, KLRFConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4


def _add_shared_flags(p):
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--trees", type=int, default=None)
    p.add_argument("--config", type=Path, default=None, help="JSON config file")
    p.add_argument("--qv-prob", type=float, default=None)
    p.add_argument("--cross-view", action="store_true", default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="klrf")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic benchmark")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=6)
    p.add_argument("--per-class", type=int, default=50)
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--sigma-a", type=float, default=None)
    p.add_argument("--sigma-k", type=float, default=None)
    p.add_argument("--views", type=str, default="0",
                   help="comma-separated test view angles in degrees")

    p = sub.add_parser("train", help="train a KLRF (or baseline RF) model")
    p.add_argument("manifest", type=Path)
    p.add_argument("--model-out", type=Path, required=True)
    p.add_argument("--baseline", action="store_true")
    p.add_argument("--augment", action="store_true", default=None)
    p.add_argument("--report-dir", type=Path, default=None)
    p.add_argument("--no-figures", action="store_true")
    _add_shared_flags(p)

    p = sub.add_parser("eval", help="evaluate a model on a test manifest")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--kcf", action="store_true")
    p.add_argument("--expand-offsets", type=int, default=0,
                   help="expand each test sequence into N temporal-offset "
                        "variants before KCF grouping")
    p.add_argument("--report-dir", type=Path, default=None)
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("predict", help="per-sequence predictions as CSV")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--kcf", action="store_true")

    p = sub.add_parser("inspect", help="summarize a trained model")
    p.add_argument("--model", type=Path, required=True)
    return parser


def _load_config(args):
    if getattr(args, "config", None):
        try:
            cfg = KLRFConfig.from_dict(json.loads(args.config.read_text()))
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from exc
    else:
        cfg = KLRFConfig()
    # flags win over the config file
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "trees", None) is not None:
        cfg.num_trees = args.trees
    if getattr(args, "threads", None) is not None:
        cfg.n_threads = args.threads
    if getattr(args, "qv_prob", None) is not None:
        cfg.qv_switch_prob = args.qv_prob
    if getattr(args, "cross_view", None):
        cfg.cross_view_mode = True
        cfg.augment_training = True
    if getattr(args, "augment", None):
        cfg.augment_training = True
    if not cfg.cross_view_mode:
        cfg.qv_switch_prob = 0.0  # Qv applies to cross-view training only
    return cfg


def cmd_synth(args):
    views = [float(v) for v in args.views.split(",") if v.strip() != ""]
    kwargs = dict(
        num_classes=args.classes,
        sequences_per_class=args.per_class,
        frames_per_sequence=args.frames,
        seed=args.seed,
        views=[0.0],
    )
    if args.sigma_a is not None:
        kwargs["sigma_a"] = args.sigma_a
    if args.sigma_k is not None:
        kwargs["sigma_k"] = args.sigma_k
    train_cfg = SynthConfig(**kwargs)
    train_seqs, _ = data_io.synth_generate(train_cfg)
    save_dataset(train_seqs, args.out / "train", name="synth-train")
    print(f"train: {len(train_seqs)} sequences -> {args.out / 'train'}")
    for view in views:
        test_cfg = SynthConfig(**{**kwargs, "views": [view]})
        _, test_seqs = data_io.synth_generate(test_cfg)
        tag = f"test_view{view:g}"
        save_dataset(test_seqs, args.out / tag, name=f"synth-{tag}")
        print(f"{tag}: {len(test_seqs)} sequences -> {args.out / tag}")
    return EXIT_OK


def cmd_train(args):
    cfg = _load_config(args)
    sequences = load_dataset(args.manifest)
    t0 = time.perf_counter()
    if args.baseline:
        model = learning.train_baseline(sequences, cfg)
    else:
        model = learning.train_klrf(sequences, cfg)
    elapsed = time.perf_counter() - t0
    checksum = save_model(model, args.model_out)
    print(f"trained {model.forest.mode} model: {cfg.num_trees} trees in {elapsed:.1f}s")
    print(f"model -> {args.model_out} (sha256 {checksum[:16]}...)")
    table = report_mod.usefulness_table(model)
    if table is not None:
        print("usefulness score by class:")
        for name, (mean_u, count) in table.items():
            print(f"  {name:<16} mean U = {mean_u:+.4f}  (n={count})")
    if args.report_dir:
        train_probs, _ = learning.evaluate(model, sequences)
        label_map = {n: i for i, n in enumerate(model.label_names)}
        y_true = [label_map[s.label] for s in sequences]
        y_pred = np.argmax(train_probs, axis=1)
        rep = report_mod.from_predictions(
            y_true, y_pred, model.label_names,
            config_echo=cfg.to_dict(), seed=cfg.seed, wall_clock=elapsed,
        )
        report_mod.write_report(
            rep, args.report_dir, figures=not args.no_figures,
            usefulness_by_class=table,
        )
        print(f"training report -> {args.report_dir}")
    return EXIT_OK


def _evaluate_to_report(model, sequences, use_kcf, wall_clock=0.0):
    label_map = {n: i for i, n in enumerate(model.label_names)}
    unknown = {s.label for s in sequences} - set(label_map)
    if unknown:
        raise DataError(f"test labels not seen in training: {sorted(unknown)}")
    probs, _ = learning.evaluate(model, sequences, use_kcf=use_kcf)
    y_true = [label_map[s.label] for s in sequences]
    y_pred = np.argmax(probs, axis=1)
    return report_mod.from_predictions(
        y_true, y_pred, model.label_names,
        config_echo=model.config.to_dict(), seed=model.config.seed,
        wall_clock=wall_clock,
    ), probs


def cmd_eval(args):
    model = load_model(args.model)
    sequences = load_dataset(args.manifest)
    if args.expand_offsets > 1:
        sequences = learning.expand_with_temporal_offsets(sequences, args.expand_offsets)
    t0 = time.perf_counter()
    rep, _ = _evaluate_to_report(model, sequences, use_kcf=args.kcf)
    rep.wall_clock = time.perf_counter() - t0
    for line in rep.summary_lines():
        print(line)
    if args.report_dir:
        report_mod.write_report(rep, args.report_dir, figures=not args.no_figures)
        print(f"report -> {args.report_dir}")
    return EXIT_OK


def cmd_predict(args):
    model = load_model(args.model)
    sequences = load_dataset(args.manifest)
    probs, _ = learning.evaluate(model, sequences, use_kcf=args.kcf)
    lines = ["id,predicted," + ",".join(model.label_names)]
    for seq, p in zip(sequences, probs):
        pred = model.label_names[int(np.argmax(p))]
        lines.append(f"{seq.id},{pred}," + ",".join(f"{v:.6f}" for v in p))
    text = "\n".join(lines) + "\n"
    if args.out:
        args.out.write_text(text)
        print(f"predictions -> {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _tree_stats(node, depth=0, acc=None):
    if acc is None:
        acc = {"leaves": 0, "internal": 0, "max_depth": 0}
    acc["max_depth"] = max(acc["max_depth"], depth)
    if node.is_leaf:
        acc["leaves"] += 1
    else:
        acc["internal"] += 1
        _tree_stats(node.left, depth + 1, acc)
        _tree_stats(node.right, depth + 1, acc)
    return acc


def cmd_inspect(args):
    model = load_model(args.model)
    forest = model.forest
    stats = [_tree_stats(t) for t in forest.trees]
    depths = [s["max_depth"] for s in stats]
    leaves = [s["leaves"] for s in stats]
    internal = sum(s["internal"] for s in stats)
    print(f"mode: {forest.mode} ({forest.feature_space} features)")
    print(f"trees: {len(forest.trees)}")
    print(f"classes: {len(forest.label_names)} {forest.label_names}")
    print(f"feature dim: {forest.feature_dim}, kinematic dim: {forest.kinematic_dim}")
    print(f"depth: min {min(depths)} / mean {np.mean(depths):.1f} / max {max(depths)}")
    print(f"leaves per tree: min {min(leaves)} / mean {np.mean(leaves):.1f} / max {max(leaves)}")
    print(f"internal nodes: {internal}")
    counts = forest.quality_counts
    total = sum(counts.values())
    print("quality-choice frequencies:")
    for key in ("Qs", "Qc", "Qk", "Qv"):
        if total:
            print(f"  {key}: {counts.get(key, 0)} ({100.0 * counts.get(key, 0) / total:.1f}%)")
        else:
            print(f"  {key}: 0")
    hist = np.bincount(leaves)
    print(f"leaf-count histogram (leaves -> trees): "
          + ", ".join(f"{i}:{v}" for i, v in enumerate(hist) if v))
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "synth": cmd_synth,
        "train": cmd_train,
        "eval": cmd_eval,
        "predict": cmd_predict,
        "inspect": cmd_inspect,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - surface as invariant violation
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
