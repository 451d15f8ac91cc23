"""Command-line interface.

Subcommands: gen-data, pretrain, finetune, train-aifr, eval, gradcheck,
export. Every command prints its fully-resolved config so runs can be
reproduced exactly, and exits with a stable code per failure family:
0 success, 1 failed check, 2 invalid config, 3 I/O or data error,
4 numerical failure, 5 checkpoint incompatibility.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

from .checkpoints import load_checkpoint, save_checkpoint
from .config import config_to_json, load_config
from .errors import CheckpointError, ConfigError, DataError, NumericalError
from .evaluation import encode_dataset, evaluate, export_features, export_metrics, pca_project
from .gradcheck import CHECK_NAMES, TOLERANCE, run_suite
from .losses import ablation_config
from .synth import generate, load_csv, save_csv
from .training import finetune_age, finetune_identity, pretrain_age, train_aifr

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4
EXIT_COMPAT = 5


def _parse_overrides(rest):
    """Turn trailing '--section.key value' pairs into (key, value) tuples."""
    pairs = []
    i = 0
    while i < len(rest):
        key = rest[i]
        if not key.startswith("--"):
            raise ConfigError(f"expected an override flag like --train.lr, got {key!r}")
        if i + 1 >= len(rest):
            raise ConfigError(f"override {key!r} is missing a value")
        pairs.append((key[2:], rest[i + 1]))
        i += 2
    return pairs


def _echo_config(run, out_dir=None):
    text = config_to_json(run.resolved)
    sys.stdout.write(text)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "config.json"), "w") as fh:
            fh.write(text)


def _load_run(args, rest, forced=None):
    overrides = _parse_overrides(rest)
    return load_config(getattr(args, "config", None), overrides, forced=forced)


def cmd_gen_data(args, rest):
    run = _load_run(args, rest)
    _echo_config(run)
    dataset = generate(run.data)
    save_csv(dataset, args.out)
    print(f"wrote {len(dataset)} samples to {args.out}")
    return EXIT_OK


def cmd_pretrain(args, rest):
    forced = {"train": {"mode": "age"}}
    run = _load_run(args, rest, forced=forced)
    cfg = run.train
    if args.ablation != "full":
        cfg = replace(cfg, loss=ablation_config(cfg.loss, args.ablation))
    _echo_config(run, args.out_dir)
    dataset = load_csv(args.data)
    ckpt = pretrain_age(dataset, cfg, encoder_spec=run.model, config_echo=run.resolved)
    path = os.path.join(args.out_dir, "checkpoint.json")
    save_checkpoint(ckpt, path)
    print(f"pretrained {cfg.epochs_pretrain} epochs; checkpoint -> {path}")
    return EXIT_OK


def cmd_finetune(args, rest):
    run = _load_run(args, rest)
    _echo_config(run, args.out_dir)
    dataset = load_csv(args.data)
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.mode == "age":
        out = finetune_age(ckpt, dataset, run.train)
    else:
        out = finetune_identity(ckpt, dataset, run.train)
    path = os.path.join(args.out_dir, "checkpoint.json")
    save_checkpoint(out, path)
    print(f"finetuned {run.train.epochs_finetune} epochs; checkpoint -> {path}")
    return EXIT_OK


def cmd_train_aifr(args, rest):
    forced = {"train": {"mode": "aifr"}}
    run = _load_run(args, rest, forced=forced)
    _echo_config(run, args.out_dir)
    dataset = load_csv(args.data)
    ckpt = train_aifr(dataset, run.train, encoder_spec=run.model, config_echo=run.resolved)
    path = os.path.join(args.out_dir, "checkpoint.json")
    save_checkpoint(ckpt, path)
    print(f"trained {run.train.epochs_pretrain} aifr epochs; checkpoint -> {path}")
    return EXIT_OK


def cmd_eval(args, rest):
    if rest:
        raise ConfigError(f"eval takes no overrides, got {rest!r}")
    dataset = load_csv(args.data)
    ckpt = load_checkpoint(args.checkpoint)
    metrics = evaluate(ckpt, dataset, probe_seed=args.probe_seed)
    os.makedirs(args.out_dir, exist_ok=True)
    path = os.path.join(args.out_dir, "metrics.json")
    export_metrics(metrics, path)
    if args.export_features:
        export_features(ckpt, dataset, os.path.join(args.out_dir, "features.csv"), space=args.feature_space)
    for key, value in sorted(metrics.to_dict().items()):
        if key != "loss_trace" and value is not None:
            print(f"{key}: {value:.6f}")
    print(f"metrics -> {path}")
    return EXIT_OK


def cmd_export(args, rest):
    if rest:
        raise ConfigError(f"export takes no overrides, got {rest!r}")
    dataset = load_csv(args.data)
    ckpt = load_checkpoint(args.checkpoint)
    os.makedirs(args.out_dir, exist_ok=True)
    feat_path = os.path.join(args.out_dir, "features.csv")
    export_features(ckpt, dataset, feat_path, space=args.feature_space)
    z_age, z_id, _ = encode_dataset(ckpt, dataset)
    z = z_age if args.feature_space == "age" else z_id
    projected, ratios = pca_project(z, args.pca)
    pca_path = os.path.join(args.out_dir, "pca.csv")
    header = ["y_age", "y_id"] + [f"p_{i}" for i in range(args.pca)]
    with open(pca_path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(projected.shape[0]):
            row = [str(int(dataset.y_age[i])), str(int(dataset.y_id[i]))]
            row.extend(repr(float(v)) for v in projected[i])
            fh.write(",".join(row) + "\n")
    with open(os.path.join(args.out_dir, "pca.json"), "w") as fh:
        json.dump({"explained_variance_ratio": [float(r) for r in ratios]}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"features -> {feat_path}")
    print(f"pca projection -> {pca_path}")
    return EXIT_OK


def cmd_gradcheck(args, rest):
    if rest:
        raise ConfigError(f"gradcheck takes no overrides, got {rest!r}")
    names = CHECK_NAMES if args.checks is None else tuple(args.checks.split(","))
    results = run_suite(
        seeds=args.seeds,
        names=names,
        inject_wrong_sign=args.inject_wrong_sign,
        threads=args.threads,
    )
    failed = [r for r in results if not r.passed]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name}: max_rel_err={r.max_rel_err:.3e} over {r.seeds} seeds [{status}]")
    if args.out is not None:
        report = {
            "tolerance": TOLERANCE,
            "results": [
                {"name": r.name, "max_rel_err": r.max_rel_err, "seeds": r.seeds, "passed": r.passed}
                for r in results
            ],
        }
        with open(args.out, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    if failed:
        print(f"FAILED checks: {', '.join(r.name for r in failed)}")
        return EXIT_CHECK_FAILED
    print(f"all {len(results)} gradient checks passed (tolerance {TOLERANCE:g})")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ordcon",
        description="Order-enhanced contrastive learning on synthetic ordinal data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset CSV")
    p.add_argument("--config", default=None, help="JSON config path (defaults apply when omitted)")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", help="contrastive pretraining on age labels")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True, help="dataset CSV from gen-data")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--ablation", default="full", choices=["full", "order-hard", "order-only", "metric-only"])
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="finetune the readout head on a checkpoint")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("train-aifr", help="joint identity + age-group training")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_train_aifr)

    p = sub.add_parser("eval", help="compute metrics for a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--probe-seed", type=int, default=0)
    p.add_argument("--export-features", action="store_true")
    p.add_argument("--feature-space", default="age", choices=["age", "id"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference checks for every objective")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--checks", default=None, help="comma-separated subset of checks")
    p.add_argument("--threads", type=int, default=None, help="defaults to ORDCON_THREADS or 1")
    p.add_argument("--out", default=None, help="optional JSON report path")
    p.add_argument("--inject-wrong-sign", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("export", help="write feature and PCA projection CSVs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--feature-space", default="age", choices=["age", "id"])
    p.add_argument("--pca", type=int, default=2)
    p.set_defaults(func=cmd_export)

    return parser


def main(argv=None):
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    try:
        return args.func(args, rest)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data/io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_COMPAT


if __name__ == "__main__":
    sys.exit(main())
