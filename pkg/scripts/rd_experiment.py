"""Rate-distortion sweep: bundles for several M over the lambda grid, evaluated on test images.

Writes one metrics TSV per M, then prints the mode-map share of the total rate
and the BD-rate of every M against the first one (M=1 by default). At desk scale the BD-rate numbers only
show the plumbing working; they are not expected to match full-scale training.
"""

import argparse
import logging
import tempfile
import time
from pathlib import Path

from scmc.competition import encode_image
from scmc.errors import ConfigurationError
from scmc.imageio import list_images, read_image
from scmc.metrics import MetricRow, average_curve, bd_rate, metrics_tsv
from scmc.sample_data import TEST_IMAGES, TRAIN_IMAGES, write_images
from scmc.trainer import LAMBDA_GRID, TrainConfig, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--m", type=int, nargs="+", default=[1, 2, 4, 8])
    ap.add_argument("--lambdas", type=float, nargs="+", default=list(LAMBDA_GRID))
    ap.add_argument("--iters", type=int, default=100)
    ap.add_argument("--phases", type=int, default=2)
    ap.add_argument("--patches", type=int, default=512)
    ap.add_argument("--patch-size", type=int, default=32)
    ap.add_argument("--batch-size", type=int, default=16)
    ap.add_argument("--lr", type=float, default=3e-3)
    ap.add_argument("--eval-patch-size", type=int, default=128)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("rd_results"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)
    args.out.mkdir(parents=True, exist_ok=True)

    with tempfile.TemporaryDirectory() as tmp:
        train_dir, test_dir = Path(tmp) / "train", Path(tmp) / "test"
        write_images(train_dir, TRAIN_IMAGES)
        write_images(test_dir, TEST_IMAGES)
        images = {p.name: read_image(p) for p in list_images(test_dir)}
        curves, shares = {}, {}
        for m in args.m:
            start = time.perf_counter()
            rows, share = [], []
            for lam in args.lambdas:
                cfg = TrainConfig(M=m, lam=lam, patch_size=args.patch_size, batch_size=args.batch_size,
                                  iters_per_update=args.iters, base_lr=args.lr, max_phases=args.phases,
                                  num_patches=args.patches, seed=args.seed)
                bundle = train(cfg, train_dir).bundle
                for name, img in images.items():
                    enc = encode_image(img, bundle, args.eval_patch_size)
                    rows.append(MetricRow(name, m, lam, enc.rate_bpp, enc.mode_map_bpp, enc.psnr_db))
                    share.append(enc.mode_map_bits / enc.total_bits)
            (args.out / f"metrics_M{m}.tsv").write_text(metrics_tsv(rows))
            curves[m], shares[m] = average_curve(rows), max(share)
            print(f"M={m}: {len(rows)} encodings in {time.perf_counter() - start:.0f} s, "
                  f"max mode-map share {100 * shares[m]:.3f}%", flush=True)

    print(f"M\tbd_rate_vs_M{args.m[0]}_percent\tmax_mode_map_share_percent")
    for m in args.m:
        try:
            bd = f"{bd_rate(curves[args.m[0]], curves[m]):.3f}"
        except ConfigurationError as exc:  # too few points or no PSNR overlap
            bd = f"n/a ({exc})"
        print(f"{m}\t{bd}\t{100 * shares[m]:.4f}")


if __name__ == "__main__":
    main()
