"""Command-line entry point: gen, train, eval, gradcheck, demo."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import torch

from .config import RunConfig, format_config, load_config
from .files import load_checkpoint
from .harness import build_sets, dump_heatmaps, grad_check, run_eval, run_train
from .model import build_model
from .pipeline import forward_pipeline
from .synth import save_clips

log = logging.getLogger("nodepose")


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.steps is not None:
        over["steps"] = args.steps
    if args.out is not None:
        over["out"] = args.out
    return cfg.replace(**over)


def _model(cfg: RunConfig, checkpoint, dtype=torch.float64):
    if checkpoint:
        m = load_checkpoint(checkpoint, dtype)
        if m.dims != cfg.dims():
            raise SystemExit(f"checkpoint dims {m.dims} do not match config {cfg.dims()}")
        return m
    return build_model(cfg.dims(), cfg.seed, dtype)


def cmd_gen(cfg: RunConfig, args) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, clips in build_sets(cfg).items():
        save_clips(out / f"{name}.bin", clips)
        print(f"{name}: {len(clips)} clips -> {out / name}.bin")
    (out / "config.txt").write_text(format_config(cfg))
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    res = run_train(cfg, out=cfg.out)
    first, last = res.rows[0], res.rows[-1]
    print(f"loss {first['loss_total']:.5f} -> {last['loss_total']:.5f}  val pck@0.2 {last['pck_mean']:.3f}")
    print(f"checkpoint: {res.checkpoint}\nmetrics: {res.metrics_csv}")
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    if not args.checkpoint:
        raise SystemExit("eval needs --checkpoint")
    report = run_eval(cfg, args.checkpoint, out=cfg.out)
    for set_name, preds in report.items():
        for pname, rep in preds.items():
            print(f"{set_name:15s} {pname:7s} pck@0.1 {rep['pck@0.1']:.3f}  pck@0.2 {rep['pck@0.2']:.3f}  "
                  f"err {rep['mean_error_px']:.3f}px")
    return 0


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    clips = build_sets(cfg.replace(train_clips=args.clips, val_clips=1, eval_clips=1))["train"]
    res = grad_check(_model(cfg, args.checkpoint), clips, cfg.skeleton(), n=args.coords, seed=cfg.seed)
    worst = int(res.rel_error.argmax())
    print(f"{len(res.indices)} coordinates, max relative error {res.max_rel_error:.3e} "
          f"(index {res.indices[worst]}: analytic {res.analytic[worst]:.6e}, numeric {res.numeric[worst]:.6e})")
    return 0 if res.max_rel_error < 1e-4 else 1


def cmd_demo(cfg: RunConfig, args) -> int:
    clip = build_sets(cfg.replace(train_clips=1, val_clips=1, eval_clips=1))["eval_corrupted"][0]
    u, _, _ = forward_pipeline(clip, _model(cfg, args.checkpoint), cfg.skeleton())
    paths = dump_heatmaps(Path(cfg.out) / "demo", u.detach().numpy(), clip, cfg)
    print(f"wrote {len(paths)} images to {Path(cfg.out) / 'demo'}")
    return 0


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "gradcheck": cmd_gradcheck, "demo": cmd_demo}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--seed", type=int, help="model/training seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--checkpoint", help="checkpoint file (eval, gradcheck, demo)")
    common.add_argument("--steps", type=int, help="training steps")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="nodepose", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="write train/val/eval clip files")
    sub.add_parser("train", parents=[common], help="train and write checkpoint + metrics.csv")
    sub.add_parser("eval", parents=[common], help="PCK and pixel error vs the argmax baseline")
    gc = sub.add_parser("gradcheck", parents=[common], help="autograd vs central differences")
    gc.add_argument("--coords", type=int, default=200)
    gc.add_argument("--clips", type=int, default=2)
    sub.add_parser("demo", parents=[common], help="dump one clip's rendered heatmaps")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is not None and args.seed < 0:
        raise SystemExit("--seed must be non-negative")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return COMMANDS[args.command](resolve_config(args), args)


if __name__ == "__main__":
    sys.exit(main())
