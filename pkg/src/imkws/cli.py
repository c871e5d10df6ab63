"""Command-line interface.

Subcommands: ``pretrain`` (emit a source checkpoint), ``adapt`` (single run on
a synthetic stream or an ingested feature CSV), ``sweep`` (method x ratio x
snr x seed grid), ``gradcheck`` (finite-difference verification of all
analytic gradients), ``ingest`` (validate a feature CSV).

Exit codes: 0 success, 1 usage error (bad flags, bad files, bad config),
2 numerical-check failure from ``gradcheck``.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from .adapt import METHODS, adapt_stream
from .experiment import (
    ExperimentConfig,
    pretrain_model,
    run_experiment,
    run_single,
    write_predictions_csv,
)
from .gradcheck import run_gradcheck
from .metrics import evaluate_predictions
from .model import load_checkpoint, save_checkpoint
from .stream import StreamBatch, load_feature_csv, make_class_templates

__all__ = ["main", "build_parser"]


class _Parser(argparse.ArgumentParser):
    """argparse parser whose usage errors exit 1 instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(","))


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _add_adapt_flags(p: argparse.ArgumentParser):
    p.add_argument("--lr", type=float, help="adaptation learning rate")
    p.add_argument("--tau", type=float, help="reward-branch temperature")
    p.add_argument("--alpha", type=float, help="penalty-branch scale in (0, 1]")
    p.add_argument("--lam", type=float, help="consistency coefficient")
    p.add_argument("--sigma", type=float, help="sample-weight normalization factor")
    p.add_argument("--tau-dem", type=float, help="selection threshold on the decoupled entropy")
    p.add_argument("--tau-pkc", type=float, help="selection threshold on the confidence drop")
    p.add_argument("--no-dem", action="store_true", help="ablation: plain entropy instead of DEM")
    p.add_argument("--no-consistency", action="store_true", help="ablation: drop the consistency term")
    p.add_argument("--no-selection", action="store_true", help="ablation: keep every sample")


def _add_stream_flags(p: argparse.ArgumentParser):
    p.add_argument("--ratio", type=float, help="non-keyword-to-keyword ratio r (stream is 1:r)")
    p.add_argument("--snr", type=float, dest="snr_db", help="signal-to-noise ratio in dB")
    p.add_argument("--n-batches", type=int, help="number of stream batches")
    p.add_argument("--batch-size", type=int, help="samples per batch")
    p.add_argument("--t", type=int, dest="T", help="time frames per grid")
    p.add_argument("--f", type=int, dest="F", help="feature bins per grid")
    p.add_argument("--within-class-std", type=float, help="within-class jitter std")
    p.add_argument("--noise-mode", choices=("lowrank", "white"), help="noise field structure")
    p.add_argument("--template-seed", type=int, help="seed fixing the class templates")


def build_parser() -> _Parser:
    parser = _Parser(prog="imkws", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_pre = sub.add_parser("pretrain", parents=[], help="pretrain a source model and save a checkpoint")
    p_pre.add_argument("--out", required=True, help="checkpoint output path")
    p_pre.add_argument("--classes", type=int, default=4)
    p_pre.add_argument("--t", type=int, dest="T", default=32)
    p_pre.add_argument("--f", type=int, dest="F", default=40)
    p_pre.add_argument("--hidden", type=int, default=32)
    p_pre.add_argument("--epochs", type=int, default=30)
    p_pre.add_argument("--lr", type=float, default=0.05)
    p_pre.add_argument("--n-per-class", type=int, default=400)
    p_pre.add_argument("--within-class-std", type=float, default=0.5)
    p_pre.add_argument("--template-seed", type=int, default=1234)
    p_pre.add_argument("--seed", type=int, default=7)

    p_adapt = sub.add_parser("adapt", help="one adaptation run over one stream")
    p_adapt.add_argument("--checkpoint", required=True, help="source checkpoint path")
    p_adapt.add_argument("--method", choices=METHODS, default="imkws")
    p_adapt.add_argument("--seed", type=int, default=0)
    p_adapt.add_argument("--features", help="adapt to grids from this feature CSV instead of a synthetic stream")
    p_adapt.add_argument("--out-dir", required=True)
    p_adapt.add_argument("--format", choices=("csv", "json"), default="csv")
    _add_stream_flags(p_adapt)
    _add_adapt_flags(p_adapt)

    p_sweep = sub.add_parser("sweep", help="grid of methods x ratios x snrs x seeds")
    p_sweep.add_argument("--config", help="experiment config JSON (flag overrides apply on top)")
    p_sweep.add_argument("--methods", type=_str_list, help="comma-separated method names")
    p_sweep.add_argument("--ratios", type=_float_list, help="comma-separated ratios")
    p_sweep.add_argument("--snrs", type=_float_list, help="comma-separated SNRs (dB)")
    p_sweep.add_argument("--seeds", type=_int_list, help="comma-separated seeds")
    p_sweep.add_argument("--checkpoint", help="checkpoint to load or create")
    p_sweep.add_argument("--out-dir", required=True)
    p_sweep.add_argument("--format", choices=("csv", "json"), default="csv")
    _add_stream_flags(p_sweep)
    _add_adapt_flags(p_sweep)

    p_grad = sub.add_parser("gradcheck", help="finite-difference verification of analytic gradients")
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--trials", type=int, default=20)

    p_ingest = sub.add_parser("ingest", help="validate a feature CSV")
    p_ingest.add_argument("path")

    return parser


def _experiment_config_from_args(args) -> ExperimentConfig:
    config = ExperimentConfig.from_file(args.config) if getattr(args, "config", None) else ExperimentConfig()
    overrides = {}
    mapping = {
        "methods": "methods",
        "ratios": "ratios",
        "snrs": "snrs",
        "seeds": "seeds",
        "ratio": None,
        "snr_db": None,
        "n_batches": "n_batches",
        "batch_size": "batch_size",
        "T": "T",
        "F": "F",
        "within_class_std": "within_class_std",
        "noise_mode": "noise_mode",
        "template_seed": "template_seed",
        "lr": "lr",
        "tau": "tau",
        "alpha": "alpha",
        "lam": "lam",
        "sigma": "sigma",
        "tau_dem": "tau_dem",
        "tau_pkc": "tau_pkc",
        "checkpoint": "checkpoint",
    }
    for arg_name, cfg_name in mapping.items():
        if cfg_name is None:
            continue
        value = getattr(args, arg_name, None)
        if value is not None:
            overrides[cfg_name] = value
    if getattr(args, "ratio", None) is not None:
        overrides["ratios"] = (args.ratio,)
    if getattr(args, "snr_db", None) is not None:
        overrides["snrs"] = (args.snr_db,)
    for flag, cfg_name in (("no_dem", "use_dem"), ("no_consistency", "use_consistency"), ("no_selection", "use_selection")):
        if getattr(args, flag, False):
            overrides[cfg_name] = False
    return dataclasses.replace(config, **overrides)


def _cmd_pretrain(args) -> int:
    config = ExperimentConfig(
        n_classes=args.classes,
        T=args.T,
        F=args.F,
        n_hidden=args.hidden,
        pretrain_epochs=args.epochs,
        pretrain_lr=args.lr,
        n_per_class=args.n_per_class,
        within_class_std=args.within_class_std,
        template_seed=args.template_seed,
        model_seed=args.seed,
    )
    templates = make_class_templates(config.n_classes, config.T, config.F, config.template_seed)
    model = pretrain_model(config, templates)
    save_checkpoint(model, args.out)
    print(f"checkpoint written to {args.out}")
    print(f"source validation macro F1: {model.validation_f1_:.4f}")
    return 0


def _csv_stream(path: str, batch_size: int):
    """Batches (and labels, -1 where unlabeled) from an ingested feature CSV."""
    examples = load_feature_csv(path)
    if not examples:
        raise ValueError(f"{path} holds no feature grids")
    grids = np.stack([g for g, _ in examples])
    labels = np.array([lbl for _, lbl in examples], dtype=np.int64)
    batches = []
    for b, start in enumerate(range(0, len(grids), batch_size)):
        batches.append(
            StreamBatch(grids=grids[start : start + batch_size], labels=labels[start : start + batch_size], batch_index=b)
        )
    return batches


def _cmd_adapt(args) -> int:
    config = _experiment_config_from_args(args)
    model = load_checkpoint(args.checkpoint)
    adapt_cfg = config.adapt_config(args.method, args.seed)
    os.makedirs(args.out_dir, exist_ok=True)

    if args.features:
        batches = _csv_stream(args.features, config.batch_size)
        labels = np.concatenate([b.labels for b in batches])
        n_classes = model.n_classes
        seed = args.seed
    else:
        templates = make_class_templates(config.n_classes, config.T, config.F, config.template_seed)
        stream_cfg = config.stream_config(config.ratios[0], config.snrs[0], args.seed)
        result = run_single(model, templates, stream_cfg, adapt_cfg)
        result.trace.to_csv(os.path.join(args.out_dir, "trace.csv"))
        if args.format == "json":
            result.trace.to_json(os.path.join(args.out_dir, "trace.json"))
        write_predictions_csv(os.path.join(args.out_dir, "predictions.csv"), result.predictions, result.labels)
        result.report.to_json(os.path.join(args.out_dir, "report.json"))
        print(f"macro F1 {result.report.macro_f1:.4f}  micro F1 {result.report.micro_f1:.4f}")
        return 0

    _, trace, predictions = adapt_stream(model, iter(batches), adapt_cfg)
    trace.to_csv(os.path.join(args.out_dir, "trace.csv"))
    if args.format == "json":
        trace.to_json(os.path.join(args.out_dir, "trace.json"))
    if np.all(labels >= 0):
        report = evaluate_predictions(labels, predictions, n_classes, config={"method": args.method}, seed=seed)
        report.to_json(os.path.join(args.out_dir, "report.json"))
        write_predictions_csv(os.path.join(args.out_dir, "predictions.csv"), predictions, labels)
        print(f"macro F1 {report.macro_f1:.4f}  micro F1 {report.micro_f1:.4f}")
    else:
        write_predictions_csv(os.path.join(args.out_dir, "predictions.csv"), predictions, None)
        print("unlabeled stream: predictions written, no evaluation")
    return 0


def _cmd_sweep(args) -> int:
    config = _experiment_config_from_args(args)
    results = run_experiment(config, out_dir=args.out_dir, fmt=args.format)
    print(f"{len(results)} runs written to {args.out_dir}")
    return 0


def _cmd_gradcheck(args) -> int:
    report = run_gradcheck(seed=args.seed, trials=args.trials)
    for line in report.lines():
        print(line)
    return 0 if report.passed else 2


def _cmd_ingest(args) -> int:
    examples = load_feature_csv(args.path)
    if examples:
        t, f = examples[0][0].shape
        n_labeled = sum(1 for _, lbl in examples if lbl >= 0)
        print(f"ok: {len(examples)} grids of shape ({t}, {f}), {n_labeled} labeled")
    else:
        print("ok: empty file, 0 grids")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "pretrain":
            return _cmd_pretrain(args)
        if args.command == "adapt":
            return _cmd_adapt(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "gradcheck":
            return _cmd_gradcheck(args)
        if args.command == "ingest":
            return _cmd_ingest(args)
        parser.error(f"unknown command {args.command!r}")
    except (ValueError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
