"""Autograd vs finite differences at init for several seeds and step sizes.

Also reports how many coordinates needed a smaller step because the stencil
crossed a ReLU/Huber/clamp kink.
"""
import argparse

import numpy as np

from nodepose.config import RunConfig
from nodepose.harness import build_sets, grad_check
from nodepose.model import build_model


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3])
    ap.add_argument("--steps", type=float, nargs="+", default=[1e-3, 1e-4, 1e-5])
    ap.add_argument("--coords", type=int, default=200)
    args = ap.parse_args()

    cfg = RunConfig()
    clips = build_sets(cfg.replace(train_clips=2, val_clips=1, eval_clips=1))["train"]
    print(f"{'seed':>4} {'h':>8} {'max rel':>10} {'median rel':>11} {'kinked':>6}")
    for seed in args.seeds:
        model = build_model(cfg.dims(), seed)
        for h in args.steps:
            r = grad_check(model, clips, cfg.skeleton(), n=args.coords, h=h, seed=seed)
            print(f"{seed:4d} {h:8.0e} {r.max_rel_error:10.2e} {np.median(r.rel_error):11.2e} "
                  f"{int(np.sum(r.kinked)):6d}", flush=True)


if __name__ == "__main__":
    main()
