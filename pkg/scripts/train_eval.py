"""Train on synthetic clips over several seeds, then compare against the argmax baseline.

    python scripts/train_eval.py --seeds 0 1 2 --steps 500 --out runs/seeds
"""
import argparse
from pathlib import Path

import numpy as np

from nodepose.config import RunConfig, load_config
from nodepose.harness import build_sets, run_eval, run_train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--steps", type=int)
    ap.add_argument("--out", default="runs/train_eval")
    args = ap.parse_args()

    base = load_config(args.config) if args.config else RunConfig()
    if args.steps is not None:
        base = base.replace(steps=args.steps)
    sets = build_sets(base)  # data does not depend on the model seed
    rows = []
    for seed in args.seeds:
        cfg = base.replace(seed=seed, out=str(Path(args.out) / f"seed{seed}"))
        res = run_train(cfg, out=cfg.out, sets=sets)
        rep = run_eval(cfg, res.checkpoint, out=cfg.out, sets=sets)
        first, last = res.rows[0]["loss_total"], res.rows[-1]["loss_total"]
        corr, clean = rep["eval_corrupted"], rep["eval_clean"]
        rows.append((seed, first, last, corr["model"]["mean_error_px"], corr["argmax"]["mean_error_px"],
                     clean["model"]["pck@0.2"]))
        print(f"seed {seed}: loss {first:.4f} -> {last:.5f}  corrupted err {rows[-1][3]:.3f}px "
              f"(argmax {rows[-1][4]:.3f}px)  clean pck@0.2 {rows[-1][5]:.3f}", flush=True)
    arr = np.array(rows)
    print(f"mean over {len(rows)} seeds: corrupted err {arr[:, 3].mean():.3f}px  argmax {arr[:, 4].mean():.3f}px  "
          f"clean pck@0.2 {arr[:, 5].mean():.3f}")


if __name__ == "__main__":
    main()
