"""Quality, rate and complexity accounting."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .codec import CodecArch, LayerSpec
from .errors import ConfigurationError, UsageError

LOSSLESS = "lossless"

# MAC/pixel of the reference architecture: synthesis and entropy model of the
# low-complexity overfitted codec, plus the reduced learned analysis transform.
REFERENCE_KAPPA_GA = 17690
REFERENCE_KAPPA_GS = 708
REFERENCE_KAPPA_P = 725

# factorized Laplace: scale the two interval ends of each symbol by 1/sigma
ENTROPY_MACS_PER_SYMBOL = 2

METRIC_COLUMNS = ("image", "M", "lambda", "rate_bpp", "mode_map_bpp", "psnr_db")
COMPLEXITY_COLUMNS = ("kappa_ga", "kappa_gs", "kappa_p", "M", "kappa_enc", "kappa_dec")


def mse(reference: np.ndarray, test: np.ndarray) -> float:
    reference, test = np.asarray(reference), np.asarray(test)
    if reference.shape != test.shape:
        raise UsageError(f"image dims differ: {reference.shape} vs {test.shape}")
    d = reference.astype(np.float64) - test.astype(np.float64)
    return float((d * d).mean())


def psnr(reference: np.ndarray, test: np.ndarray) -> float:
    """PSNR in dB over all RGB samples in [0, 1]; +inf for identical images."""
    e = mse(reference, test)
    return math.inf if e == 0 else -10.0 * math.log10(e)


def format_psnr(value: float) -> str:
    return LOSSLESS if math.isinf(value) else f"{value:.6f}"


def parse_psnr(text: str) -> float:
    return math.inf if text.strip() == LOSSLESS else float(text)


@dataclass(frozen=True)
class RDPoint:
    rate_bpp: float
    psnr_db: float


def _curve(points) -> tuple[np.ndarray, np.ndarray]:
    pts = [(p.rate_bpp, p.psnr_db) if isinstance(p, RDPoint) else tuple(p) for p in points]
    pts = [p for p in pts if math.isfinite(p[1])]
    pts.sort()
    rate = np.array([p[0] for p in pts], dtype=np.float64)
    quality = np.array([p[1] for p in pts], dtype=np.float64)
    if rate.size < 4:
        raise ConfigurationError(f"BD-rate needs at least 4 finite points, got {rate.size}")
    if (rate <= 0).any() or (np.diff(rate) <= 0).any():
        raise ConfigurationError("rates must be positive and strictly increasing")
    return rate, quality


def bd_rate(curve_a: Sequence, curve_b: Sequence) -> float:
    """Average rate difference (%) of ``curve_b`` against ``curve_a`` at equal PSNR.

    Cubic fit of ln(rate) as a function of PSNR for each curve, closed-form
    integration over the overlapping PSNR interval. Negative means ``curve_b``
    needs fewer bits.
    """
    ra, qa = _curve(curve_a)
    rb, qb = _curve(curve_b)
    lo = max(qa.min(), qb.min())
    hi = min(qa.max(), qb.max())
    if not hi > lo:
        raise ConfigurationError(f"PSNR ranges do not overlap ([{qa.min()}, {qa.max()}] vs [{qb.min()}, {qb.max()}])")
    pa = np.polyint(np.polyfit(qa, np.log(ra), 3))
    pb = np.polyint(np.polyfit(qb, np.log(rb), 3))
    ia = np.polyval(pa, hi) - np.polyval(pa, lo)
    ib = np.polyval(pb, hi) - np.polyval(pb, lo)
    return float((math.exp((ib - ia) / (hi - lo)) - 1.0) * 100.0)


# --------------------------------------------------------------------------
# complexity


def layer_macs_per_pixel(layers: Iterable[LayerSpec], scale: float = 1.0) -> tuple[float, float]:
    """MACs per input pixel of a layer stack and the output resolution factor.

    ``scale`` is the number of feature-map pixels per image pixel at the stack input.
    """
    total = 0.0
    for spec in layers:
        if spec.kind == "conv":
            scale /= spec.stride * spec.stride
            total += spec.out_ch * spec.in_ch * spec.kernel * spec.kernel * scale
        elif spec.kind == "upsample-nearest":
            scale *= 4
    return total, scale


def mac_count(arch: CodecArch) -> tuple[float, float, float]:
    """(kappa_ga, kappa_gs, kappa_p) in MAC per image pixel."""
    ga, latent_scale = layer_macs_per_pixel(arch.analysis, 1.0)
    gs, _ = layer_macs_per_pixel(arch.synthesis, latent_scale)
    p = ENTROPY_MACS_PER_SYMBOL * arch.latent_channels * latent_scale
    return ga, gs, p


@dataclass(frozen=True)
class ComplexityReport:
    kappa_ga: float
    kappa_gs: float
    kappa_p: float
    M: int

    @property
    def kappa_enc(self) -> float:
        """M selection passes (analysis, synthesis, entropy) plus one final analysis + entropy pass."""
        return self.M * (self.kappa_ga + self.kappa_gs + self.kappa_p) + self.kappa_ga + self.kappa_p

    @property
    def kappa_dec(self) -> float:
        return self.kappa_gs + self.kappa_p

    @property
    def kappa_enc_single_pass(self) -> float:
        """Encoder cost when a lone codec skips selection and only the analysis is counted.

        This is the convention behind the 17690 MAC/pixel plotted for a single codec.
        For M > 1 it coincides with ``kappa_enc``.
        """
        return self.kappa_ga if self.M == 1 else self.kappa_enc

    def row(self, single_pass_m1: bool = False) -> tuple:
        enc = self.kappa_enc_single_pass if single_pass_m1 else self.kappa_enc
        return (self.kappa_ga, self.kappa_gs, self.kappa_p, self.M, enc, self.kappa_dec)


def complexity_report(kappas: Sequence[float], M: int) -> ComplexityReport:
    if M < 1:
        raise ConfigurationError("M must be >= 1")
    ga, gs, p = kappas
    return ComplexityReport(ga, gs, p, M)


REFERENCE_PROFILE = (REFERENCE_KAPPA_GA, REFERENCE_KAPPA_GS, REFERENCE_KAPPA_P)


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)) or float(x).is_integer():
        return str(int(x))
    return f"{x:.6g}"


def complexity_tsv(reports: Iterable[ComplexityReport], single_pass_m1: bool = False) -> str:
    lines = ["\t".join(COMPLEXITY_COLUMNS)]
    lines += ["\t".join(_fmt(v) for v in r.row(single_pass_m1)) for r in reports]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# metrics TSV


@dataclass(frozen=True)
class MetricRow:
    image: str
    M: int
    lam: float
    rate_bpp: float
    mode_map_bpp: float
    psnr_db: float

    def fields(self) -> list[str]:
        # repr keeps rates exact, so bytes * 8 / pixels survives the round trip
        return [self.image, str(self.M), repr(self.lam), repr(float(self.rate_bpp)), repr(float(self.mode_map_bpp)),
                format_psnr(self.psnr_db)]


def metrics_tsv(rows: Iterable[MetricRow], header: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    if header:
        w.writerow(METRIC_COLUMNS)
    for r in rows:
        w.writerow(r.fields())
    return buf.getvalue()


def read_metrics_tsv(text: str) -> list[MetricRow]:
    reader = csv.reader(io.StringIO(text), delimiter="\t")
    head = next(reader, None)
    if head is None or tuple(head) != METRIC_COLUMNS:
        raise ConfigurationError(f"metrics TSV must start with header {METRIC_COLUMNS}")
    rows = []
    for n, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != len(METRIC_COLUMNS):
            raise ConfigurationError(f"line {n}: expected {len(METRIC_COLUMNS)} columns, got {len(rec)}")
        rows.append(MetricRow(rec[0], int(rec[1]), float(rec[2]), float(rec[3]), float(rec[4]), parse_psnr(rec[5])))
    return rows


def average_curve(rows: Iterable[MetricRow]) -> list[RDPoint]:
    """One point per lambda: rate and PSNR averaged over images (lossless rows dropped)."""
    by_lam: dict[float, list[MetricRow]] = {}
    for r in rows:
        if math.isfinite(r.psnr_db):
            by_lam.setdefault(r.lam, []).append(r)
    return sorted((RDPoint(float(np.mean([r.rate_bpp for r in g])), float(np.mean([r.psnr_db for r in g])))
                   for g in by_lam.values()), key=lambda p: p.rate_bpp)
