"""Overfit the tiny model on synthetic composites and write the resulting mattes.

    python demos/overfit_synthetic.py --steps 500 --out demo_out
"""

import argparse
import os

import numpy as np

from regionmatte import Trainer, infer, save_checkpoint, tiny_config
from regionmatte.imageio import write_image
from regionmatte.metrics import metric_sad


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--steps", type=int, default=500)
    parser.add_argument("--lr", type=float, default=5e-4)
    parser.add_argument("--refine-lr-scale", type=float, default=20.0)
    parser.add_argument("--samples", type=int, default=4)
    parser.add_argument("--out", default="demo_out")
    args = parser.parse_args()
    os.makedirs(args.out, exist_ok=True)

    trainer = Trainer(tiny_config(steps=args.steps, learning_rate=args.lr, refine_lr_scale=args.refine_lr_scale,
                                  num_samples=args.samples, batch=args.samples))
    for step in range(args.steps):
        parts = trainer.step()
        if step % 25 == 0 or step == args.steps - 1:
            print(f"step {step:4d}  loss {parts['total']:.4f}  regions {parts['regions']}", flush=True)
    save_checkpoint(trainer.checkpoint(), os.path.join(args.out, "model.mtlt"))

    refined_total = coarse_total = 0.0
    for i, sample in enumerate(trainer.samples):
        result = infer(sample.image, trainer.model)
        refined, coarse = metric_sad(result.alpha, sample.alpha), metric_sad(result.coarse_alpha, sample.alpha)
        refined_total += refined
        coarse_total += coarse
        print(f"sample {i}: {len(result.regions)} regions, SAD coarse {coarse:.2f} -> refined {refined:.2f}")
        write_image(os.path.join(args.out, f"sample{i}_image.ppm"), sample.image)
        write_image(os.path.join(args.out, f"sample{i}_gt.pgm"), sample.alpha)
        write_image(os.path.join(args.out, f"sample{i}_coarse.pgm"), result.coarse_alpha)
        write_image(os.path.join(args.out, f"sample{i}_alpha.pgm"), result.alpha)
        write_image(os.path.join(args.out, f"sample{i}_diff.pgm"), np.abs(result.alpha - sample.alpha))
    print(f"pipeline / coarse SAD: {refined_total / coarse_total:.3f}")


if __name__ == "__main__":
    main()
