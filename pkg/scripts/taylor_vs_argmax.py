"""Sub-pixel error of second-order Taylor refinement vs integer argmax.

Sweeps the Gaussian width and additive noise on a 64x48 grid.
"""
import argparse

import numpy as np

from nodepose.vtvje import taylor_refine


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    H, W = 64, 48
    ys, xs = np.mgrid[0:H, 0:W]
    rng = np.random.default_rng(args.seed)
    print(f"{'sigma':>5} {'noise':>6} {'taylor px':>10} {'argmax px':>10}")
    for sigma in (1.5, 2.0, 3.0, 5.0):
        for noise in (0.0, 0.01, 0.05):
            e_t, e_a = [], []
            for _ in range(args.n):
                cx, cy = rng.uniform(4, W - 5), rng.uniform(4, H - 5)
                hm = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sigma**2))
                hm = hm + rng.normal(0.0, noise, hm.shape)
                p = taylor_refine(hm)
                r, c = np.unravel_index(hm.argmax(), hm.shape)
                e_t.append(np.hypot(p.x - cx, p.y - cy))
                e_a.append(np.hypot(c - cx, r - cy))
            print(f"{sigma:5.1f} {noise:6.2f} {np.mean(e_t):10.4f} {np.mean(e_a):10.4f}")


if __name__ == "__main__":
    main()
