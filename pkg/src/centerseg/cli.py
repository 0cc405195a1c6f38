"""Command-line entry point: ``centerseg <subcommand> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .config import ModelConfig
from .data import CLASS_NAMES, DatasetManifest, generate_synthetic
from .errors import CheckpointError, ConfigError
from .harness import (Trainer, build_superpixels, evaluate, expand_grid, permutation_baseline,
                      sweep)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    """``--config FILE`` plus one ``--key VALUE`` flag per config field."""
    parser.add_argument("--config", type=Path, help="flat key = value config file")
    group = parser.add_argument_group("config overrides")
    for f in dataclasses.fields(ModelConfig):
        flag = "--" + f.name.replace("_", "-")
        group.add_argument(flag, dest=f"cfg_{f.name}", metavar=str(f.type).upper(), default=None,
                           help=f"(default {getattr(ModelConfig(), f.name)!r})")


def _config(args) -> ModelConfig:
    base = ModelConfig.load(args.config) if args.config else ModelConfig()
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    return ModelConfig.from_dict(overrides, base)


def _parse_grid(items: list[str]) -> dict[str, list]:
    """``key=v1,v2`` axes; ``k1+k2=a+b,c+d`` sets two keys together."""
    grid = {}
    for item in items:
        key, sep, values = item.partition("=")
        if not sep or not values:
            raise ConfigError(f"grid axis must look like key=v1,v2 (got {item!r})")
        grid[key.strip()] = [v.strip() for v in values.split(",")]
    for cell in expand_grid(grid):
        ModelConfig.from_dict(cell)  # validates keys and values before any training
    return grid


def cmd_gen_data(args) -> int:
    classes = args.classes if args.class_names is None else args.class_names.split(",")
    m = generate_synthetic(args.out, args.count, args.seed, classes, args.size, args.max_shapes,
                           not args.no_background_word)
    print(f"wrote {len(m)} samples to {m.root} (classes: {', '.join(m.class_names)})")
    return 0


def cmd_superpixel(args) -> int:
    cfg = _config(args)
    m = DatasetManifest.load(args.data)
    n = build_superpixels(m, cfg, force=args.force)
    m.save()
    print(f"computed {n} superpixel maps ({len(m) - n} already cached)")
    return 0


def cmd_train(args) -> int:
    m = DatasetManifest.load(args.data)
    if args.resume:
        trainer = Trainer.resume(args.resume, m, args.out)
    else:
        trainer = Trainer(_config(args), m, args.out)
        trainer.cfg.save(Path(args.out) / "config.cfg")
    trainer.fit(steps=args.steps, checkpoint_every=args.checkpoint_every)
    print(f"trained to step {trainer.step}; checkpoint {Path(args.out) / 'final.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    m = DatasetManifest.load(args.data)
    labels = args.labels.split(",") if args.labels else None
    res = evaluate(args.checkpoint, m, labels, args.threshold, args.out, bypass=args.bypass,
                   include_background=False if args.exclude_background else None)
    for name, iou in zip(res.report.class_names, res.report.per_class_iou):
        print(f"{name:>20s}  {iou:.4f}")
    print(f"{'mIoU':>20s}  {res.report.miou:.4f}")
    if args.baseline:
        n = len(labels) if labels else len(m.class_names)
        base = permutation_baseline(res.predictions, res.ground_truth, n,
                                    not args.exclude_background)
        print(f"{'shuffle baseline':>20s}  {base:.4f}")
    return 0


def cmd_sweep(args) -> int:
    path = sweep(_config(args), _parse_grid(args.grid), args.data, args.out, args.jobs)
    print(path.read_text(), end="")
    return 0


def cmd_inspect(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    sizes = {k: int(np.prod(v.shape)) for k, v in ckpt.params.items()}
    info = {
        "version": ckpt.version,
        "step": ckpt.step,
        "parameters": sum(sizes.values()),
        "tensors": len(sizes),
        "vocab_size": len(ckpt.vocab),
        "config": ckpt.config.to_dict(),
    }
    if args.tensors:
        info["shapes"] = {k: list(v.shape) for k, v in sorted(ckpt.params.items())}
    print(json.dumps(info, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="centerseg", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic shapes dataset")
    g.add_argument("out", type=Path)
    g.add_argument("--count", type=int, default=16)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--classes", type=int, default=2, help="use the first N palette classes")
    g.add_argument("--class-names", help=f"comma list from: {', '.join(CLASS_NAMES)}")
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--max-shapes", type=int, default=3)
    g.add_argument("--no-background-word", action="store_true",
                   help="leave the background colour out of captions")
    g.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("superpixel", help="precompute superpixel caches for a dataset")
    s.add_argument("data", type=Path)
    s.add_argument("--force", action="store_true")
    _add_config_flags(s)
    s.set_defaults(func=cmd_superpixel)

    t = sub.add_parser("train", help="train a model on a dataset manifest")
    t.add_argument("data", type=Path)
    t.add_argument("--out", type=Path, required=True)
    t.add_argument("--resume", type=Path, help="continue from a checkpoint")
    t.add_argument("--stop-at", dest="steps", type=int, help="stop early at this step")
    t.add_argument("--checkpoint-every", type=int, default=0)
    _add_config_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="segment a dataset and report mIoU")
    e.add_argument("checkpoint", type=Path)
    e.add_argument("data", type=Path)
    e.add_argument("--labels", help="comma-separated label names (default: dataset classes)")
    e.add_argument("--threshold", type=float)
    e.add_argument("--out", type=Path, help="write masks/ and iou.csv here")
    e.add_argument("--exclude-background", action="store_true")
    e.add_argument("--baseline", action="store_true", help="also print the shuffle baseline")
    e.add_argument("--bypass", action="store_true", help="score ground truth against itself")
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("sweep", help="train and evaluate every cell of a config grid")
    w.add_argument("data", type=Path)
    w.add_argument("--out", type=Path, required=True)
    w.add_argument("--grid", nargs="+", required=True, metavar="KEY=V1,V2")
    w.add_argument("--jobs", type=int, default=1)
    _add_config_flags(w)
    w.set_defaults(func=cmd_sweep)

    i = sub.add_parser("inspect-checkpoint", help="print checkpoint metadata as JSON")
    i.add_argument("checkpoint", type=Path)
    i.add_argument("--tensors", action="store_true", help="list every tensor shape")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
