"""Pick the synthetic noise level for the 10%-ratio comparisons.

For each candidate noise level, draws the default-sized dataset (8 classes,
40 per class, seed 7) and reports the held-out accuracy of the raw-video
linear classifier and of the full model over five seeded 10% splits. A
useful level leaves the video baseline well short of perfect while the
classes stay learnable.

    python3 scripts/calibrate_noise.py --noise 0.1 0.15 0.2 0.25
"""
import argparse
import time
from dataclasses import replace

import numpy as np

from divafn import experiments
from divafn.datamodel import SynthConfig, generate_synthetic
from divafn.objective import Hyperparams
from divafn.trainer import TrainConfig


def main():
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--noise", type=float, nargs="+", default=[0.05, 0.1, 0.15, 0.2, 0.25])
    p.add_argument("--ratio", type=float, default=0.1)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--skip-full", action="store_true", help="only the video baseline")
    args = p.parse_args()

    base = TrainConfig(hp=Hyperparams(lr=experiments.SMALL_SAMPLE_LR,
                                      iters=experiments.SMALL_SAMPLE_ITERS))
    print(f"{'noise':>6} {'video':>7} {'full':>7} {'secs':>6}")
    for noise in args.noise:
        ds, table = generate_synthetic(SynthConfig(noise=noise), seed=7)
        t0 = time.perf_counter()
        video, full = [], []
        for seed in range(args.seeds):
            tr, te = experiments.split(ds.labels, args.ratio, seed)
            video.append(experiments.video_baseline(ds, tr, te))
            if not args.skip_full:
                _, _, held = experiments.mode_run(ds, table, replace(base, seed=seed), tr, te)
                full.append(held.accuracy)
        full_txt = f"{100 * np.mean(full):7.1f}" if full else f"{'-':>7}"
        print(f"{noise:6.3f} {100 * np.mean(video):7.1f} {full_txt} {time.perf_counter() - t0:6.0f}",
              flush=True)


if __name__ == "__main__":
    main()
