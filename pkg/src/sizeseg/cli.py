"""Command line: generate, pretrain, finetune, evaluate, verify, bench.

Training flags mirror ``TrainConfig`` fields in kebab-case. ``--config``
loads a JSON file with the same keys; flags given on the command line win.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
import typing
from pathlib import Path

from .data import SHAPE_FAMILIES, generate_synthetic, load_split, save_split, split_dataset
from .network import init_params, load_checkpoint, save_checkpoint
from .training import (TrainConfig, bench_csv, bench_epoch_duration, evaluate, finetune, pretrain,
                       read_metrics, write_metrics)
from .verify import format_report, verify, write_report

_SKIP = {"data_dir", "out_dir"}


def _field_type(f):
    t = typing.get_type_hints(TrainConfig)[f.name]
    args = [a for a in typing.get_args(t) if a is not type(None)]
    return args[0] if args else t


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file with TrainConfig keys")
    p.add_argument("--data-dir", type=Path, help="dataset root written by 'generate'")
    p.add_argument("--out-dir", type=Path, help="where checkpoints and metrics go")
    g = p.add_argument_group("training configuration")
    for f in dataclasses.fields(TrainConfig):
        if f.name in _SKIP:
            continue
        flag = "--" + f.name.replace("_", "-")
        t = _field_type(f)
        if t is bool:
            g.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        else:
            g.add_argument(flag, dest=f.name, type=t, default=None, metavar=t.__name__.upper())


def config_from_args(args) -> TrainConfig:
    values = json.loads(Path(args.config).read_text()) if getattr(args, "config", None) else {}
    for f in dataclasses.fields(TrainConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = str(v) if isinstance(v, Path) else v
    return TrainConfig.from_dict(values)


def _dirs(cfg: TrainConfig):
    if not cfg.data_dir:
        raise SystemExit("--data-dir (or data_dir in --config) is required")
    out = Path(cfg.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    return Path(cfg.data_dir), out


def cmd_generate(args) -> int:
    samples = generate_synthetic(args.count, args.height, args.width, tuple(args.families), args.seed)
    split = split_dataset(samples, tuple(args.fractions), args.m_full, args.seed)
    save_split(split, args.out)
    print(f"{args.out}: {len(split.train_full)} full + {len(split.train_weak)} size-labelled train, "
          f"{len(split.validation)} val, {len(split.test)} test")
    return 0


def cmd_pretrain(args) -> int:
    cfg = config_from_args(args)
    data, out = _dirs(cfg)
    params, records = pretrain(cfg, load_split(data))
    save_checkpoint(params, out / "pretrained.ckpt")
    write_metrics(records, out / "metrics.csv")
    last = records[-1]
    print(f"pretrain: {len(records)} epochs, last val E {last.val_E:.4g}, IoU {last.val_IoU:.4f}")
    return 0


def cmd_finetune(args) -> int:
    cfg = config_from_args(args)
    data, out = _dirs(cfg)
    params, records = finetune(cfg, load_checkpoint(args.checkpoint), load_split(data))
    save_checkpoint(params, out / "finetuned.ckpt")
    metrics = out / "metrics.csv"
    earlier = [r for r in read_metrics(metrics) if r.phase != "finetune"] if metrics.exists() else []
    write_metrics(earlier + records, metrics)
    print(f"finetune: {len(records)} epochs, best val E {min(r.val_E for r in records):.4g}")
    return 0


def cmd_evaluate(args) -> int:
    split = load_split(args.data_dir)
    samples = split.test if args.part == "test" else split.validation
    res = evaluate(load_checkpoint(args.checkpoint), samples)
    print(f"{args.part}: mean E {res.mean_E:.6g}  mean IoU {res.mean_IoU:.6f}  ({len(res.rows)} samples)")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["uid", "gt_size", "pred_size", "E", "IoU"], lineterminator="\n")
            w.writeheader()
            w.writerows(res.rows)
    return 0


def cmd_verify(args) -> int:
    report = verify(args.depth, inject_dt_fault=args.inject_dt_fault, seed=args.seed)
    write_report(report, args.report)
    print(format_report(report))
    return 0 if report["passed"] else 1


def cmd_bench(args) -> int:
    cfg = config_from_args(args)
    data, out = _dirs(cfg)
    split = load_split(data)
    samples = (split.train_full + split.validation + split.test) if args.part == "all" else split.test
    if args.limit:
        samples = samples[:args.limit]
    params = load_checkpoint(args.checkpoint) if args.checkpoint else init_params(cfg.arch, cfg.seed)
    rows = bench_epoch_duration(cfg, params, samples, args.n_values, args.epochs)
    text = bench_csv(rows)
    (out / "bench.csv").write_text(text)
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sizeseg", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic single-object dataset")
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--count", type=int, default=704)
    g.add_argument("--height", type=int, default=32)
    g.add_argument("--width", type=int, default=32)
    g.add_argument("--families", nargs="+", choices=SHAPE_FAMILIES, default=["disc", "ellipse"])
    g.add_argument("--fractions", nargs=3, type=float, default=[512 / 704, 64 / 704, 128 / 704],
                   metavar=("TRAIN", "VAL", "TEST"))
    g.add_argument("--m-full", type=int, default=8)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_generate)

    p = sub.add_parser("pretrain", help="supervised training on the fully annotated subset")
    _add_config_flags(p)
    p.set_defaults(func=cmd_pretrain)

    f = sub.add_parser("finetune", help="size-supervised training from a checkpoint")
    f.add_argument("--checkpoint", type=Path, required=True)
    _add_config_flags(f)
    f.set_defaults(func=cmd_finetune)

    e = sub.add_parser("evaluate", help="mean size error and IoU of a checkpoint")
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--data-dir", type=Path, required=True)
    e.add_argument("--part", choices=("test", "val"), default="test")
    e.add_argument("--out", type=Path, help="optional per-sample CSV")
    e.set_defaults(func=cmd_evaluate)

    v = sub.add_parser("verify", help="run every oracle check and write report.json")
    v.add_argument("--depth", choices=("quick", "full"), default="quick")
    v.add_argument("--report", type=Path, default=Path("report.json"))
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--inject-dt-fault", action="store_true",
                   help="perturb one distance value to confirm the checks can fail")
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("bench", help="time supervised and n-sample weak epochs")
    b.add_argument("--checkpoint", type=Path)
    b.add_argument("--n-values", nargs="+", type=int, default=[1, 2, 4, 8])
    b.add_argument("--epochs", type=int, default=3, help="timed epochs per setting")
    b.add_argument("--part", choices=("test", "all"), default="test")
    b.add_argument("--limit", type=int, default=0)
    _add_config_flags(b)
    b.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
