"""Desk-scale training run: M codecs on random crops of the scikit-image sample images.

Defaults follow the desk-scale recipe (2k Adam steps per codec and phase, 4k
crops of 32x32). Prints the per-phase log and checks that the final total loss
is below the loss after the first phase.
"""

import argparse
import logging
import tempfile
import time
from pathlib import Path

from scmc.sample_data import TRAIN_IMAGES, write_images
from scmc.trainer import TrainConfig, log_tsv, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--images", type=Path, default=None, help="image directory (default: sample images)")
    ap.add_argument("--m", type=int, default=2)
    ap.add_argument("--lambda", dest="lam", type=float, default=0.001)
    ap.add_argument("--iters", type=int, default=2000)
    ap.add_argument("--patches", type=int, default=4000)
    ap.add_argument("--patch-size", type=int, default=32)
    ap.add_argument("--batch-size", type=int, default=64)
    ap.add_argument("--phases", type=int, default=4)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("desk.scmc"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    with tempfile.TemporaryDirectory() as tmp:
        images = args.images
        if images is None:
            images = Path(tmp)
            write_images(images, TRAIN_IMAGES)
        cfg = TrainConfig(M=args.m, lam=args.lam, patch_size=args.patch_size, batch_size=args.batch_size,
                          iters_per_update=args.iters, base_lr=args.lr, max_phases=args.phases,
                          num_patches=args.patches, seed=args.seed)
        start = time.perf_counter()
        result = train(cfg, images)
    result.bundle.save(args.out)
    print(log_tsv(result.log), end="")
    first, last = result.log[0].total_loss, result.log[-1].total_loss
    verdict = "lower" if last < first else "NOT lower"
    print(f"# final total loss {last:.6g} is {verdict} than after phase 0 ({first:.6g}); "
          f"{time.perf_counter() - start:.0f} s; bundle {args.out}")


if __name__ == "__main__":
    main()
