"""MAC/pixel table for the reference profile and for the local default architecture."""

import argparse

from scmc.codec import CodecArch
from scmc.metrics import REFERENCE_PROFILE, complexity_report, mac_count


def table(kappas, ms, label):
    print(f"# {label}: kappa_ga={kappas[0]:g} kappa_gs={kappas[1]:g} kappa_p={kappas[2]:g}")
    print("M\tkappa_enc\tkappa_enc_single_pass\tkappa_enc_kMAC\tkappa_dec")
    for m in ms:
        r = complexity_report(kappas, m)
        print(f"{m}\t{r.kappa_enc:g}\t{r.kappa_enc_single_pass:g}\t{r.kappa_enc / 1000:.0f}\t{r.kappa_dec:g}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--m", type=int, nargs="+", default=[1, 2, 4, 8])
    ap.add_argument("--latent-channels", type=int, default=12)
    args = ap.parse_args()
    table(REFERENCE_PROFILE, args.m, "reference profile")
    print()
    table(mac_count(CodecArch.default(args.latent_channels)), args.m, "local default architecture")


if __name__ == "__main__":
    main()
