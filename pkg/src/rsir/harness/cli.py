"""Command line entry point: ``rsir {train,eval,bench,inspect}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..backbone import ModelConfig, tomllib
from ..tensor import precision
from .bench import BENCH_MECHANISMS, bench, write_bench_csv
from .checkpoint import load_checkpoint
from .config import load_run_file
from .data import load_dataset
from .inspect_dump import inspect_checkpoint, write_dump
from .train import evaluate, train


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _load_model_config(path: str) -> ModelConfig:
    p = Path(path)
    if p.exists():
        with open(p, "rb") as fh:
            data = tomllib.load(fh)
        if "run" in data:
            return load_run_file(p)[1]
    return ModelConfig.load(path)


def cmd_train(args) -> int:
    run, model = load_run_file(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.eval_seed is not None:
        overrides["eval_seed"] = args.eval_seed
    run = dataclasses.replace(run, **overrides)
    result = train(run, model, resume=args.resume, stop_after=args.stop_after)
    print(json.dumps(dataclasses.asdict(result.final)))
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    with precision(np.float32):
        model = ckpt.build_model()
        data = load_dataset(args.data, model.config.image_size)
        stats = ckpt.header.get("norm_stats")
        data = data.normalized((np.asarray(stats["mean"]), np.asarray(stats["std"])) if stats else None)
        run = ckpt.header.get("run_config") or {}
        seed = args.eval_seed if args.eval_seed is not None else [run.get("seed", 0), 2]
        loss, top1 = evaluate(model, data, args.batch_size, np.random.default_rng(seed))
    print(json.dumps({"epoch": ckpt.epoch, "split": "eval", "loss": loss, "top1": top1}))
    return 0


def cmd_bench(args) -> int:
    cfg = _load_model_config(args.config)
    rows = bench(cfg, _int_list(args.resolutions), args.mechanisms.split(","), args.repeats, not args.no_timing)
    write_bench_csv(args.out, rows)
    for r in rows:
        print(f"L={r.L:6d} {r.mechanism:7s} flops={r.flops:14d} wall_ms={r.wall_ms:9.3f} peak={r.peak_bytes}")
    return 0


def cmd_inspect(args) -> int:
    with precision(np.float32):
        dump = inspect_checkpoint(args.checkpoint, args.input, args.seed)
    write_dump(args.out, dump)
    print(f"wrote {len(dump['records'])} records to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rsir", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("--config", required=True, help="run config TOML")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--stop-after", type=int, help="stop after this epoch")
    p.add_argument("--eval-seed", type=int, help="pin the sampling RNG used for evaluation")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset spec, e.g. synthetic:digits@test")
    p.add_argument("--eval-seed", type=int)
    p.add_argument("--batch-size", type=int, default=64)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="attention cost sweep over sequence length")
    p.add_argument("--config", required=True, help="model config TOML, run config TOML or preset name")
    p.add_argument("--resolutions", default="64,256,1024,4096", help="comma-separated token counts L")
    p.add_argument("--mechanisms", default=",".join(BENCH_MECHANISMS))
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--no-timing", action="store_true", help="analytic FLOPs only")
    p.add_argument("--out", default="bench.csv")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("inspect", help="dump window groupings for an input")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help=".npy image array or IDX image file")
    p.add_argument("--seed", type=int, default=0, help="seed for the random-sampling windows")
    p.add_argument("--out", default="dump.json")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
