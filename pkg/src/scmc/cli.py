"""Command-line entry point: ``scmc <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Every output file is
written to a temporary sibling and renamed into place, so a failed run never
leaves a partial artifact behind.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .bundle import CodecBundle
from .competition import encode_image, decode_bitstream, partition, select_modes
from .errors import ScmcError
from .imageio import atomic_write, list_images, read_image, write_pgm, write_ppm
from .metrics import (MetricRow, REFERENCE_PROFILE, average_curve, bd_rate, complexity_report, complexity_tsv, mac_count,
                      metrics_tsv, read_metrics_tsv)
from .trainer import TrainConfig, log_tsv, train

log = logging.getLogger("scmc")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
SEED_ENV = "SCMC_SEED"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise SystemExit(_usage(f"{SEED_ENV}={env!r} is not an integer"))


def _usage(message: str) -> int:
    print(f"scmc: error: {message}", file=sys.stderr)
    return EXIT_USAGE


def _metric_row(name: str, result, bundle: CodecBundle) -> MetricRow:
    return MetricRow(name, bundle.M, bundle.lam, result.rate_bpp, result.mode_map_bpp, result.psnr_db)


# --------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    cfg = TrainConfig(M=args.m, lam=args.lam, patch_size=args.patch_size, batch_size=args.batch_size,
                      iters_per_update=args.iters, max_phases=args.phases, num_patches=args.patches,
                      convergence_threshold=args.threshold, base_lr=args.lr, seed=_seed(args),
                      latent_channels=args.latent_channels)
    result = train(cfg, args.images)
    result.bundle.save(args.out)
    log_path = args.log or Path(str(args.out) + ".log.tsv")
    atomic_write(log_path, log_tsv(result.log).encode())
    print(f"bundle_id\t{result.bundle.bundle_id:#010x}")
    return EXIT_OK


def cmd_encode(args) -> int:
    bundle = CodecBundle.load(args.bundle)
    image = read_image(args.input)
    result = encode_image(image, bundle, args.patch_size, threads=args.threads)
    atomic_write(args.out, result.bitstream)
    row = _metric_row(Path(args.input).name, result, bundle)
    if args.report:
        atomic_write(args.report, metrics_tsv([row]).encode())
    print(metrics_tsv([row]), end="")
    return EXIT_OK


def cmd_decode(args) -> int:
    bundle = CodecBundle.load(args.bundle)
    data = Path(args.input).read_bytes()
    decoded = decode_bitstream(data, bundle, threads=args.threads)
    write_ppm(args.out, decoded.image)
    h, w = decoded.image.shape[1:]
    print(f"decoded\t{w}x{h}\tM={bundle.M}")
    return EXIT_OK


def cmd_eval(args) -> int:
    bundles = [CodecBundle.load(b) for b in args.bundle]
    paths = list_images(args.images)
    if not paths:
        print(f"scmc: error: no images in {args.images}", file=sys.stderr)
        return EXIT_FAILURE
    rows = []
    for path in paths:
        image = read_image(path)
        for bundle in bundles:
            result = encode_image(image, bundle, args.patch_size, threads=args.threads)
            rows.append(_metric_row(path.name, result, bundle))
            log.info("%s lambda=%g: %.4f bpp %.3f dB", path.name, bundle.lam, result.rate_bpp, result.psnr_db)
    text = metrics_tsv(rows)
    if args.out:
        atomic_write(args.out, text.encode())
    print(text, end="")
    return EXIT_OK


def cmd_bdrate(args) -> int:
    anchor = average_curve(read_metrics_tsv(Path(args.anchor).read_text()))
    test = average_curve(read_metrics_tsv(Path(args.test).read_text()))
    print(f"{bd_rate(anchor, test):.4f}")
    return EXIT_OK


def cmd_modemap(args) -> int:
    bundle = CodecBundle.load(args.bundle)
    image = read_image(args.input)
    patches, grid = partition(image, args.patch_size)
    selection = select_modes(patches, bundle, grid)
    write_pgm(args.out, selection.mode_map.to_gray())
    print(f"modemap\t{grid.cols}x{grid.rows}\tM={bundle.M}")
    return EXIT_OK


def cmd_complexity(args) -> int:
    if args.reference_profile == bool(args.bundle):
        return _usage("complexity needs exactly one of --bundle or --paper-profile")
    if args.reference_profile:
        kappas, default_m = REFERENCE_PROFILE, [1, 2, 4, 8]
    else:
        bundle = CodecBundle.load(args.bundle)
        kappas, default_m = mac_count(bundle.arch), [bundle.M]
    ms = args.m or default_m
    if min(ms) < 1:
        return _usage("--m must be >= 1")
    reports = [complexity_report(kappas, m) for m in ms]
    text = complexity_tsv(reports, single_pass_m1=args.single_pass_m1)
    print(text, end="")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    def globals_parser(suppress: bool) -> argparse.ArgumentParser:
        # the copy attached to subcommands must not overwrite values given before the subcommand
        d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        g = argparse.ArgumentParser(add_help=False)
        g.add_argument("--seed", type=int, default=d(None), help=f"RNG seed (falls back to ${SEED_ENV}, then 0)")
        g.add_argument("--threads", type=int, default=d(1), help="patch-level worker threads")
        g.add_argument("--verbose", "-v", action="store_true", default=d(False))
        return g

    common = globals_parser(suppress=True)
    parser = _Parser(prog="scmc", description="Spatially competing learned image codecs.",
                     parents=[globals_parser(suppress=False)])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", parents=[common], help="specialize M codecs on a directory of images")
    p.add_argument("--images", required=True, type=Path)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--log", type=Path, default=None, help="training log TSV (default: <out>.log.tsv)")
    defaults = TrainConfig()
    p.add_argument("--patch-size", type=int, default=defaults.patch_size)
    p.add_argument("--iters", type=int, default=defaults.iters_per_update, help="Adam steps per codec per phase")
    p.add_argument("--phases", type=int, default=defaults.max_phases)
    p.add_argument("--patches", type=int, default=defaults.num_patches)
    p.add_argument("--batch-size", type=int, default=defaults.batch_size)
    p.add_argument("--lr", type=float, default=defaults.base_lr)
    p.add_argument("--threshold", type=float, default=defaults.convergence_threshold)
    p.add_argument("--latent-channels", type=int, default=defaults.latent_channels)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", parents=[common], help="compress one image")
    p.add_argument("--bundle", required=True, type=Path)
    p.add_argument("--in", dest="input", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--report", type=Path, default=None, help="write a one-row metrics TSV")
    p.add_argument("--patch-size", type=int, default=128)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", parents=[common], help="decompress a bitstream to PPM")
    p.add_argument("--bundle", required=True, type=Path)
    p.add_argument("--in", dest="input", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", parents=[common], help="metrics TSV for every image under every bundle")
    p.add_argument("--bundle", required=True, type=Path, nargs="+")
    p.add_argument("--images", required=True, type=Path)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--patch-size", type=int, default=128)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bdrate", parents=[common], help="BD-rate (%%) of --test against --anchor")
    p.add_argument("--anchor", required=True, type=Path)
    p.add_argument("--test", required=True, type=Path)
    p.set_defaults(func=cmd_bdrate)

    p = sub.add_parser("modemap", parents=[common], help="export the selected modes as a PGM, one pixel per patch")
    p.add_argument("--bundle", required=True, type=Path)
    p.add_argument("--in", dest="input", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--patch-size", type=int, default=128)
    p.set_defaults(func=cmd_modemap)

    p = sub.add_parser("complexity", parents=[common], help="MAC/pixel report")
    p.add_argument("--bundle", type=Path, default=None)
    p.add_argument("--paper-profile", "--reference-profile", dest="reference_profile", action="store_true",
                   help="use the reference kappa = (17690, 708, 725)")
    p.add_argument("--m", type=int, nargs="+", default=None)
    p.add_argument("--single-pass-m1", action="store_true",
                   help="report kappa_enc = kappa_ga for M=1 (no selection pass)")
    p.set_defaults(func=cmd_complexity)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        return _usage("--threads must be >= 1")
    try:
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except ScmcError as exc:
        print(f"scmc: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (OSError, ValueError) as exc:
        print(f"scmc: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
