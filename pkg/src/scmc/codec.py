"""One lightweight autoencoder codec: analysis transform, quantizer,
factorized zero-mean Laplace entropy model and synthesis transform.

Pixel values live in [0, 1]. Distortion is MSE over RGB, rate is measured in
bits (and bits per pixel of the coded patch), loss = MSE + lambda * bpp.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ConfigurationError, UsageError

ALPHABET_MIN = -64
ALPHABET_MAX = 64
ALPHABET_SIZE = ALPHABET_MAX - ALPHABET_MIN + 1
PROB_FLOOR = 2.0**-16
SCALE_MIN = 1e-3
SCALE_MAX = 1e3
LN2 = math.log(2.0)


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "conv" | "upsample-nearest" | "leaky-relu"
    in_ch: int = 0
    out_ch: int = 0
    kernel: int = 1
    stride: int = 1
    negative_slope: float = 0.2

    def __post_init__(self):
        if self.kind not in ("conv", "upsample-nearest", "leaky-relu"):
            raise ConfigurationError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv":
            if self.kernel < 1 or self.kernel % 2 == 0:
                raise ConfigurationError(f"conv kernel must be odd, got {self.kernel}")
            if self.stride not in (1, 2):
                raise ConfigurationError(f"conv stride must be 1 or 2, got {self.stride}")

    def build(self, rng=None) -> nn.Layer:
        if self.kind == "conv":
            return nn.Conv2d(self.in_ch, self.out_ch, self.kernel, self.stride, rng=rng)
        if self.kind == "leaky-relu":
            return nn.LeakyReLU(self.negative_slope)
        return nn.UpsampleNearest()


def conv(in_ch, out_ch, kernel, stride=1) -> LayerSpec:
    return LayerSpec("conv", in_ch, out_ch, kernel, stride)


def lrelu(slope=0.2) -> LayerSpec:
    return LayerSpec("leaky-relu", negative_slope=slope)


def upsample() -> LayerSpec:
    return LayerSpec("upsample-nearest")


def _scale_and_channels(layers, channels, scale):
    """Track (channel count, spatial factor) through a layer stack."""
    for spec in layers:
        if spec.kind == "conv":
            if spec.in_ch != channels:
                raise ConfigurationError(f"layer {spec} expects {spec.in_ch} channels, got {channels}")
            channels = spec.out_ch
            scale /= spec.stride
        elif spec.kind == "upsample-nearest":
            scale *= 2
    return channels, scale


@dataclass(frozen=True)
class CodecArch:
    latent_channels: int
    analysis: tuple[LayerSpec, ...]
    synthesis: tuple[LayerSpec, ...]

    def __post_init__(self):
        c, s = _scale_and_channels(self.analysis, 3, 1.0)
        if c != self.latent_channels:
            raise ConfigurationError(f"analysis produces {c} channels, expected {self.latent_channels}")
        c2, s2 = _scale_and_channels(self.synthesis, self.latent_channels, s)
        if c2 != 3 or s2 != 1.0:
            raise ConfigurationError("synthesis must map latents back to a 3-channel full-resolution image")

    @property
    def downsample(self) -> int:
        _, s = _scale_and_channels(self.analysis, 3, 1.0)
        return round(1.0 / s)

    @classmethod
    def default(cls, latent_channels: int = 12) -> "CodecArch":
        c = latent_channels
        return cls(
            c,
            (conv(3, 32, 5, 2), lrelu(), conv(32, 32, 3, 1), lrelu(), conv(32, c, 3, 2)),
            (conv(c, 16, 3, 1), lrelu(), upsample(), conv(16, 16, 3, 1), lrelu(), upsample(), conv(16, 3, 3, 1)),
        )


@dataclass
class RDStats:
    rate_bits: float
    distortion_mse: float
    lam: float
    pixel_count: int

    @property
    def rate_bpp(self) -> float:
        return self.rate_bits / self.pixel_count

    @property
    def loss(self) -> float:
        return self.distortion_mse + self.lam * self.rate_bpp

    @property
    def psnr_db(self) -> float:
        return math.inf if self.distortion_mse == 0 else -10.0 * math.log10(self.distortion_mse)


# --------------------------------------------------------------------------
# entropy model


def effective_scale(log_scale: np.ndarray) -> np.ndarray:
    return np.clip(np.exp(np.asarray(log_scale, dtype=np.float64)), SCALE_MIN, SCALE_MAX)


def laplace_mass(v: np.ndarray, sigma) -> np.ndarray:
    """P(v - 1/2 < Y < v + 1/2) for Y ~ Laplace(0, sigma); symmetric in v."""
    u = np.abs(np.asarray(v, dtype=np.float64))
    a = (u - 0.5) / sigma
    b = (u + 0.5) / sigma
    eb = np.exp(-b)
    inner = 1.0 - 0.5 * np.exp(np.minimum(a, 0.0)) - 0.5 * eb
    outer = 0.5 * (np.exp(-np.maximum(a, 0.0)) - eb)
    return np.where(a < 0, inner, outer)


def probability_table(log_scale: np.ndarray) -> np.ndarray:
    """(C, 129) symbol probabilities over [-64, 64], floored at 2^-16 and renormalized."""
    sigma = effective_scale(log_scale)[:, None]
    v = np.arange(ALPHABET_MIN, ALPHABET_MAX + 1, dtype=np.float64)[None, :]
    p = np.maximum(laplace_mass(v, sigma), PROB_FLOOR)
    return p / p.sum(axis=1, keepdims=True)


def symbol_probability(symbol: int, channel: int, log_scale: np.ndarray) -> float:
    if not ALPHABET_MIN <= symbol <= ALPHABET_MAX:
        raise UsageError(f"symbol {symbol} outside alphabet")
    return float(probability_table(np.asarray(log_scale)[channel : channel + 1])[0, symbol - ALPHABET_MIN])


def rate_estimate(latents: np.ndarray, log_scale: np.ndarray):
    """Ideal code length in bits of integer latents (C,h,w) or (N,C,h,w).

    Returns a float for a single grid and an (N,) array for a batch.
    """
    lat = np.asarray(latents)
    single = lat.ndim == 3
    if single:
        lat = lat[None]
    if lat.min(initial=0) < ALPHABET_MIN or lat.max(initial=0) > ALPHABET_MAX:
        raise UsageError("latents outside alphabet")
    bits_table = -np.log2(probability_table(log_scale))  # (C, 129)
    c = np.arange(lat.shape[1])[None, :, None, None]
    bits = bits_table[c, lat.astype(np.int64) - ALPHABET_MIN]
    per_sample = bits.sum(axis=(1, 2, 3), dtype=np.float64)
    return float(per_sample[0]) if single else per_sample


def _training_bits(y_tilde: np.ndarray, log_scale: np.ndarray):
    """Bits of the noisy/soft latents under the continuous Laplace mass.

    Returns per-sample bits (N,), d bits / d y_tilde, d bits / d log_scale (C,).
    Probabilities are lower-bounded by 2^-16 (zero gradient below the bound).
    """
    y = y_tilde.astype(np.float64)
    raw = np.exp(np.asarray(log_scale, dtype=np.float64))
    sigma = np.clip(raw, SCALE_MIN, SCALE_MAX)
    scale_free = ((raw > SCALE_MIN) & (raw < SCALE_MAX))[None, :, None, None]
    sig = sigma[None, :, None, None]
    u = np.abs(y)
    a = (u - 0.5) / sig
    b = (u + 0.5) / sig
    ea_in = np.exp(np.minimum(a, 0.0))
    ea_out = np.exp(-np.maximum(a, 0.0))
    eb = np.exp(-b)
    inner = a < 0
    p = np.where(inner, 1.0 - 0.5 * ea_in - 0.5 * eb, 0.5 * (ea_out - eb))
    live = p > PROB_FLOOR
    p_safe = np.maximum(p, PROB_FLOOR)
    bits = -np.log2(p_safe)
    dbits_dp = np.where(live, -1.0 / (p_safe * LN2), 0.0)
    # d p / d u
    dp_du = np.where(inner, -0.5 * ea_in + 0.5 * eb, -0.5 * ea_out + 0.5 * eb) / sig
    # d p / d log sigma  (a, b scale as 1/sigma)
    dp_ds = np.where(inner, 0.5 * a * ea_in, 0.5 * a * ea_out) - 0.5 * b * eb
    dp_ds = np.where(scale_free, dp_ds, 0.0)
    grad_y = dbits_dp * dp_du * np.sign(y)
    grad_s = (dbits_dp * dp_ds).sum(axis=(0, 2, 3))
    return bits.sum(axis=(1, 2, 3)), grad_y, grad_s


# --------------------------------------------------------------------------
# quantization


def round_half_away(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y)
    return np.sign(y) * np.floor(np.abs(y) + 0.5)


def softround(y: np.ndarray, temperature: float) -> tuple[np.ndarray, np.ndarray]:
    """Smooth rounding and its derivative; tends to hard rounding as T -> 0."""
    if temperature <= 0:
        raise UsageError(f"softround temperature must be > 0, got {temperature}")
    fl = np.floor(y)
    r = y - fl - 0.5
    norm = 2.0 * math.tanh(1.0 / (2.0 * temperature))
    t = np.tanh(r / temperature)
    out = fl + 0.5 + t / norm
    deriv = (1.0 - t * t) / (temperature * norm)
    return out.astype(y.dtype), deriv.astype(y.dtype)


def quantize(y: np.ndarray, mode: str = "round", temperature: float = 0.5, rng=None, noise=None) -> np.ndarray:
    """Inference rounding (ties away from zero, clamped to [-64, 64]) or a training proxy.

    ``noise`` mode adds Uniform[-0.5, 0.5) drawn from ``rng`` unless an explicit
    ``noise`` array is given.
    """
    if mode == "round":
        return np.clip(round_half_away(y), ALPHABET_MIN, ALPHABET_MAX).astype(np.int32)
    if mode == "noise":
        if noise is None:
            if rng is None:
                raise UsageError("noise quantization needs an rng or an explicit noise array")
            noise = rng.uniform(-0.5, 0.5, size=np.shape(y))
        return y + np.asarray(noise, dtype=np.asarray(y).dtype)
    if mode == "softround":
        return softround(np.asarray(y), temperature)[0]
    raise UsageError(f"unknown quantization mode {mode!r}")


# --------------------------------------------------------------------------
# codec


class Codec:
    """Parameters (theta, phi, psi) of one codec and its forward passes."""

    def __init__(self, arch: CodecArch, rng=None, init_log_scale: float = 0.0):
        self.arch = arch
        self.analysis = nn.Sequential(spec.build(rng) for spec in arch.analysis)
        self.synthesis = nn.Sequential(spec.build(rng) for spec in arch.synthesis)
        self.log_scale = np.full(arch.latent_channels, init_log_scale, dtype=np.float32)
        if rng is not None:
            # start the reconstruction at mid-gray
            self.synthesis.layers[-1].bias[...] = 0.5

    @classmethod
    def zeros(cls, arch: CodecArch) -> "Codec":
        return cls(arch, rng=None)

    def parameters(self) -> list[np.ndarray]:
        """Analysis weights, synthesis weights, then per-channel log scales."""
        return self.analysis.params() + self.synthesis.params() + [self.log_scale]

    def copy(self) -> "Codec":
        return copy.deepcopy(self)

    def astype(self, dtype) -> "Codec":
        self.analysis.astype(dtype)
        self.synthesis.astype(dtype)
        self.log_scale = self.log_scale.astype(dtype)
        return self

    def _check_patch(self, x):
        if x.ndim != 4 or x.shape[1] != 3:
            raise UsageError(f"expected image patches of shape (N, 3, H, W), got {x.shape}")
        s = self.arch.downsample
        if x.shape[2] % s or x.shape[3] % s:
            raise UsageError(f"patch dims {x.shape[2:]} must be multiples of {s}")

    def analyze(self, x: np.ndarray, record: bool = False) -> np.ndarray:
        single = x.ndim == 3
        x = x[None] if single else x
        self._check_patch(x)
        y = self.analysis.forward(x.astype(self.log_scale.dtype, copy=False), record=record)
        return y[0] if single else y

    def synthesize(self, latents: np.ndarray, clamp: bool = True, record: bool = False) -> np.ndarray:
        single = latents.ndim == 3
        lat = latents[None] if single else latents
        if lat.ndim != 4 or lat.shape[1] != self.arch.latent_channels:
            raise UsageError(f"expected latents with {self.arch.latent_channels} channels, got {latents.shape}")
        out = self.synthesis.forward(lat.astype(self.log_scale.dtype), record=record)
        if clamp:
            out = np.clip(out, 0.0, 1.0)
        return out[0] if single else out

    def encode_latents(self, x: np.ndarray) -> np.ndarray:
        return quantize(self.analyze(x), "round")

    # ------------------------------------------------------------------
    def evaluate(self, x: np.ndarray, lam: float):
        """Inference-mode RD evaluation of a batch (N,3,P,P).

        Returns (latents, reconstruction, rate_bits[N], mse[N]).
        """
        latents = self.encode_latents(x)
        recon = self.synthesize(latents, clamp=True)
        diff = recon.astype(np.float64) - x
        mse = (diff * diff).mean(axis=(1, 2, 3))
        bits = rate_estimate(latents, self.log_scale)
        return latents, recon, bits, mse

    def loss_and_grads(self, x: np.ndarray, lam: float, quant_mode: str = "noise", rng=None, noise=None,
                       temperature: float = 0.5):
        """Batch-mean RD loss in a differentiable quantization mode and its gradient.

        Returns (RDStats aggregated over the batch, grads aligned with ``parameters()``).
        The synthesis output is not clamped here.
        """
        if lam <= 0:
            raise UsageError("lambda must be > 0")
        if x.ndim == 3:
            x = x[None]
        n = x.shape[0]
        npix = x.shape[2] * x.shape[3]
        y = self.analyze(x, record=True)
        if quant_mode == "noise":
            y_t = quantize(y, "noise", rng=rng, noise=noise)
            dq = None
        elif quant_mode == "softround":
            y_t, dq = softround(y, temperature)
        else:
            raise UsageError(f"quantization mode {quant_mode!r} is not differentiable")
        bits, gbits_y, gbits_s = _training_bits(y_t, self.log_scale)
        x_hat = self.synthesize(y_t, clamp=False, record=True)
        diff = x_hat.astype(np.float64) - x
        mse = (diff * diff).mean(axis=(1, 2, 3))
        # loss = mean_i (mse_i + lam * bits_i / npix)
        g_xhat = (2.0 / diff.size) * diff
        g_yt = self.synthesis.backward(g_xhat.astype(y.dtype)).astype(np.float64)
        g_yt += (lam / (npix * n)) * gbits_y
        if dq is not None:
            g_yt *= dq
        self.analysis.backward(g_yt.astype(y.dtype))
        g_s = ((lam / (npix * n)) * gbits_s).astype(self.log_scale.dtype)
        grads = self.analysis.grads() + self.synthesis.grads() + [g_s]
        stats = RDStats(float(bits.sum()), float(mse.mean()), lam, n * npix)
        return stats, [g.copy() for g in grads]


def rd_loss(x: np.ndarray, codec: Codec, lam: float, quant_mode: str = "round", rng=None, noise=None,
            temperature: float = 0.5) -> RDStats:
    """RD statistics of a patch (3,P,P) or batch; batches are aggregated.

    ``round`` uses the clamped inference reconstruction and the tabulated
    entropy model; ``noise``/``softround`` use the training proxies.
    """
    if lam <= 0:
        raise UsageError("lambda must be > 0")
    xb = x[None] if x.ndim == 3 else x
    npix = xb.shape[0] * xb.shape[2] * xb.shape[3]
    if quant_mode == "round":
        _, _, bits, mse = codec.evaluate(xb, lam)
        return RDStats(float(bits.sum()), float(mse.mean()), lam, npix)
    y = codec.analyze(xb)
    if quant_mode == "noise":
        y_t = quantize(y, "noise", rng=rng, noise=noise)
    elif quant_mode == "softround":
        y_t = softround(y, temperature)[0]
    else:
        raise UsageError(f"unknown quantization mode {quant_mode!r}")
    bits, _, _ = _training_bits(y_t, codec.log_scale)
    x_hat = codec.synthesize(y_t, clamp=False)
    diff = x_hat.astype(np.float64) - xb
    return RDStats(float(bits.sum()), float((diff * diff).mean()), lam, npix)
