"""Error of a trained checkpoint vs argmax as the occlusion probability grows.

    python scripts/corruption_sweep.py runs/default/checkpoint.bin
"""
import argparse

from nodepose.config import RunConfig, load_config
from nodepose.files import load_checkpoint
from nodepose.harness import argmax_baseline, make_batch, pck_report, predict
from nodepose.synth import generate_dataset


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("checkpoint")
    ap.add_argument("--config")
    ap.add_argument("--clips", type=int, default=64)
    args = ap.parse_args()

    cfg = load_config(args.config) if args.config else RunConfig()
    model = load_checkpoint(args.checkpoint)
    skel = cfg.skeleton()
    print(f"{'p_occ':>5} {'model px':>9} {'argmax px':>10} {'model pck@0.2':>14} {'argmax pck@0.2':>15}")
    for p in (0.0, 0.1, 0.2, 0.3, 0.4, 0.5):
        c = cfg.replace(occlusion_prob=p)
        clips = generate_dataset(args.clips, cfg.eval_seed, c.motion(), skel, c.gnc(), cfg.C)
        batch = make_batch(clips, next(model.parameters()).dtype)
        gt = batch.gt.double().numpy()
        m = pck_report(predict(model, batch, skel).detach().double().numpy(), gt, cfg.H, cfg.W)
        a = pck_report(argmax_baseline(clips), gt, cfg.H, cfg.W)
        print(f"{p:5.1f} {m['mean_error_px']:9.3f} {a['mean_error_px']:10.3f} {m['pck@0.2']:14.3f} {a['pck@0.2']:15.3f}")


if __name__ == "__main__":
    main()
