"""Command-line entry point: ``python -m prismnet <command>``."""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import pid
from .checkpoint import CheckpointError
from .config import ExperimentConfig, load_config
from .data import ConfigError, IngestionError
from .experiment import (TrainingDivergence, TriModalDataset, dump_embeddings, evaluate, load_models,
                         render_preview, run, run_ablation_suite, run_few_shot_suite, write_metrics,
                         write_suite)


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "fraction", None) is not None:
        changes["train_fraction"] = args.fraction
    cfg = dataclasses.replace(cfg, **changes)
    cfg.validate()
    return cfg


def _horizons(args, cfg) -> list[int]:
    if args.horizon is None:
        return list(cfg.horizons)
    if args.horizon not in cfg.horizons:
        raise ConfigError(f"horizon {args.horizon} is not in the configured set {cfg.horizons}")
    return [args.horizon]


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args) -> int:
    cfg = _config(args)
    result = run(cfg, _out(args), _horizons(args, cfg), progress=print)
    for row in result.report.rows:
        print(f"h={row.horizon}: test mse {row.mse:.6f} mae {row.mae:.6f}")
    print(f"wrote {args.out}/checkpoint.prsm, loss_log.csv, metrics.csv, timing.csv")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    ckpt = Path(args.checkpoint or Path(args.out) / "checkpoint.prsm")
    models = load_models(ckpt, cfg)
    report = evaluate(models, cfg, args.split, _horizons(args, cfg) if args.horizon else None)
    write_metrics([report], _out(args) / f"metrics_{args.split}.csv")
    for row in report.rows:
        print(f"h={row.horizon}: {args.split} mse {row.mse:.6f} mae {row.mae:.6f}")
    print(f"avg: mse {report.avg_mse:.6f} mae {report.avg_mae:.6f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    flags = args.flags.split(",") if args.flags else None
    rows = run_ablation_suite(cfg, flags, _horizons(args, cfg)[0], progress=print)
    write_suite(rows, _out(args) / "ablation.csv")
    for r in rows:
        print(f"{r.label:<20} val mae {r.val_mae:.6f} test mae {r.test_mae:.6f}")
    return 0


def cmd_fewshot(args) -> int:
    cfg = _config(args)
    fractions = [float(f) for f in args.fractions.split(",")]
    rows = run_few_shot_suite(cfg, fractions, _horizons(args, cfg)[0], progress=print)
    write_suite(rows, _out(args) / "fewshot.csv")
    for r in rows:
        print(f"{r.label:<16} test mae {r.test_mae:.6f} (test set {r.test_hash})")
    return 0


def cmd_dump(args) -> int:
    cfg = _config(args)
    ckpt = Path(args.checkpoint or Path(args.out) / "checkpoint.prsm")
    models = load_models(ckpt, cfg)
    h = _horizons(args, cfg)[0] if args.horizon else sorted(models)[0]
    if h not in models:
        raise ConfigError(f"checkpoint has no model for horizon {h}")
    ds = TriModalDataset(cfg, h)
    path = _out(args) / f"embeddings_{args.split}_h{h}.csv"
    n = dump_embeddings(models[h], ds, cfg, args.split, path)
    print(f"wrote {n} rows to {path}")
    return 0


def cmd_pid(args) -> int:
    try:
        joint = pid.load_joint(args.joint_file)
    except pid.JointParseError as exc:
        print(f"error: {args.joint_file}: {exc}", file=sys.stderr)
        return 2
    result = pid.decompose(joint, simplify=not args.full)
    print(pid.format_result(result), end="")
    if args.verify:
        reports = [("lemma 1", pid.verify_lemma1(result))]
        if joint.n_sources == 3 and result.simplified:
            reports.append(("corollary 1", pid.verify_corollary1(result)))
        for name, rep in reports:
            print(f"\n{name}: {'ok' if rep.ok else 'FAILED'} (max residual {rep.max_residual:.3e})")
            for k, v in rep.residuals.items():
                print(f"  {k}: {v:.3e}")
    return 0


def cmd_preview(args) -> int:
    cfg = _config(args)
    paths = render_preview(cfg, args.window, _out(args), _horizons(args, cfg)[0])
    print(f"wrote {len(paths)} files to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prismnet", description="Tri-modal load forecasting experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default="runs/default"):
        p.add_argument("--config", help="INI experiment config (defaults if omitted)")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", default=out_default, help="output directory")
        p.add_argument("--horizon", type=int)
        p.add_argument("--fraction", type=float, help="training fraction (few-shot)")

    p = sub.add_parser("train", help="train one model per horizon and evaluate on the test split")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="full model plus one run per ablation flag")
    common(p)
    p.add_argument("--flags", help="comma-separated subset of ablation flags")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("fewshot", help="train and evaluate per training fraction")
    common(p)
    p.add_argument("--fractions", default="0.05,0.1,0.5,1.0")
    p.set_defaults(fn=cmd_fewshot)

    p = sub.add_parser("dump-embeddings", help="export pooled embeddings per window")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.set_defaults(fn=cmd_dump)

    p = sub.add_parser("pid", help="decompose a discrete joint distribution")
    p.add_argument("joint_file")
    p.add_argument("--full", action="store_true", help="keep text-image atoms (three sources)")
    p.add_argument("--verify", action="store_true", help="print identity residuals")
    p.set_defaults(fn=cmd_pid)

    p = sub.add_parser("render-preview", help="export text and image views of one window")
    common(p, "runs/preview")
    p.add_argument("--window", type=int, default=0, help="window position in the series")
    p.set_defaults(fn=cmd_preview)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, IngestionError, CheckpointError, TrainingDivergence) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
