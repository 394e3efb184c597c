"""Command line entry point.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiment as ex
from .autodiff import DegenerateVectorError
from .backbone import EncoderInputError
from .config import ConfigError, load_config
from .shapes import (CloudFormatError, ShapeGenerationError, TaskConfigError, build_task, read_manifest,
                     write_manifest)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
TASKS = {"single": "single", "cross": "cross", "mixup": "confusing_mixup"}


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config, protocol=TASKS[args.task])
    train, test = build_task(cfg.task_spec())
    out = Path(args.out)
    write_manifest(out, "train", train, cfg.K)
    write_manifest(out, "test", test, cfg.K)
    print(f"wrote {len(train)} train / {len(test)} test clouds to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    ckpt = ex.train(cfg)
    path = ckpt.save(args.out)
    last = ckpt.history[-1] if ckpt.history else {}
    print(f"saved {path} after {ckpt.epoch} epochs" + (f", total loss {last['total']:.4f}" if last else ""))
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = ex.Checkpoint.load(args.ckpt)
    samples, K = read_manifest(args.split)
    split = ex.Split.from_samples(samples, K, ckpt.config.radius)
    result = ex.evaluate(ckpt, split, args.out).metrics
    print(json.dumps(result))
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    rows = args.rows.split(",") if args.rows else None
    table = ex.run_ablation_suite(cfg, args.seeds, rows=rows, out_dir=args.out)
    print(ex.format_table(table), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="partcom", description="Part-prototype open-set point cloud recognition")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch losses")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic task and write cloud files plus manifests")
    p.add_argument("--task", choices=sorted(TASKS), required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", required=True, help="manifest JSON written by gen-data")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the ablation grid over several seeds")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--rows", default="", help="comma separated subset of rows")
    p.add_argument("--out", default=None, help="directory for per-run outputs and the table")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (FloatingPointError, DegenerateVectorError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, TaskConfigError, CloudFormatError, ShapeGenerationError, ex.TaskMismatchError,
            EncoderInputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
