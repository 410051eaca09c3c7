"""Spatial competition between the codecs of a bundle.

The image is cut into P x P patches (edge patches replicate-padded), each patch
picks the codec with the lowest inference RD loss, the per-patch choice is
sent as a fixed-length mode map, and every patch is coded independently with
its selected codec.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import bitstream as bs
from .bundle import CodecBundle
from .codec import RDStats, rate_estimate
from .errors import BundleMismatchError, ConfigurationError, UsageError
from .rangecoder import build_cdf, decode_latents, encode_latents

EVAL_CHUNK = 16


@dataclass(frozen=True)
class PatchGrid:
    height: int
    width: int
    patch_size: int

    @property
    def rows(self) -> int:
        return -(-self.height // self.patch_size)

    @property
    def cols(self) -> int:
        return -(-self.width // self.patch_size)

    @property
    def K(self) -> int:
        return self.rows * self.cols

    def position(self, k: int) -> tuple[int, int]:
        return divmod(k, self.cols)

    def index(self, row: int, col: int) -> int:
        return row * self.cols + col


@dataclass
class ModeMap:
    grid: PatchGrid
    modes: np.ndarray
    M: int

    def __post_init__(self):
        self.modes = np.asarray(self.modes, dtype=np.int64)
        if self.modes.shape != (self.grid.K,):
            raise ConfigurationError(f"mode map has {self.modes.size} entries for {self.grid.K} patches")
        if self.modes.size and (self.modes.min() < 0 or self.modes.max() >= self.M):
            raise ConfigurationError("mode index out of range")

    @property
    def bits(self) -> int:
        return self.grid.K * bs.bits_per_mode(self.M)

    def as_grid(self) -> np.ndarray:
        return self.modes.reshape(self.grid.rows, self.grid.cols)

    def to_gray(self) -> np.ndarray:
        """Kh x Kw uint8 image, mode index scaled to [0, 255]."""
        if self.M == 1:
            return np.zeros((self.grid.rows, self.grid.cols), dtype=np.uint8)
        return np.rint(self.as_grid() * (255.0 / (self.M - 1))).astype(np.uint8)


def partition(image: np.ndarray, patch_size: int) -> tuple[np.ndarray, PatchGrid]:
    """Split (3,H,W) into row-major (K,3,P,P) patches, replicate-padding the border."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise UsageError(f"expected a (3, H, W) image, got {image.shape}")
    if patch_size <= 0 or patch_size % 4:
        raise ConfigurationError(f"patch size must be a positive multiple of 4, got {patch_size}")
    _, h, w = image.shape
    grid = PatchGrid(h, w, patch_size)
    P = patch_size
    padded = np.pad(image, ((0, 0), (0, grid.rows * P - h), (0, grid.cols * P - w)), mode="edge")
    patches = padded.reshape(3, grid.rows, P, grid.cols, P).transpose(1, 3, 0, 2, 4).reshape(grid.K, 3, P, P)
    return np.ascontiguousarray(patches), grid


def assemble(patches: np.ndarray, grid: PatchGrid) -> np.ndarray:
    P = grid.patch_size
    full = patches.reshape(grid.rows, grid.cols, 3, P, P).transpose(2, 0, 3, 1, 4)
    full = full.reshape(3, grid.rows * P, grid.cols * P)
    return np.ascontiguousarray(full[:, : grid.height, : grid.width])


def mode_map_rate_bpp(grid: PatchGrid, M: int) -> float:
    """K * ceil(log2 M) / (H * W)."""
    if M < 1:
        raise ConfigurationError("M must be >= 1")
    return grid.K * bs.bits_per_mode(M) / (grid.height * grid.width)


@dataclass
class Selection:
    mode_map: ModeMap | None
    losses: np.ndarray  # (K, M) inference RD loss of every codec on every patch
    rate_bits: np.ndarray  # (K, M)
    mse: np.ndarray  # (K, M)
    lam: float
    pixels_per_patch: int

    @property
    def modes(self) -> np.ndarray:
        return self.mode_map.modes

    def patch_stats(self) -> list[RDStats]:
        k = np.arange(self.losses.shape[0])
        m = self.modes
        return [RDStats(float(b), float(d), self.lam, self.pixels_per_patch)
                for b, d in zip(self.rate_bits[k, m], self.mse[k, m])]

    @property
    def selected_loss(self) -> np.ndarray:
        return self.losses[np.arange(self.losses.shape[0]), self.modes]


def evaluate_all(patches: np.ndarray, bundle: CodecBundle) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inference RD evaluation of every codec on every patch; returns (loss, bits, mse), each (N, M)."""
    n = patches.shape[0]
    npix = patches.shape[2] * patches.shape[3]
    bits = np.zeros((n, bundle.M))
    mse = np.zeros((n, bundle.M))
    for m, codec in enumerate(bundle.codecs):
        for start in range(0, n, EVAL_CHUNK):
            chunk = patches[start : start + EVAL_CHUNK]
            _, _, b, d = codec.evaluate(chunk, bundle.lam)
            bits[start : start + EVAL_CHUNK, m] = b
            mse[start : start + EVAL_CHUNK, m] = d
    return mse + bundle.lam * bits / npix, bits, mse


def select_modes(patches: np.ndarray, bundle: CodecBundle, grid: PatchGrid | None = None) -> Selection:
    """Per-patch argmin of the RD loss over all codecs; ties go to the lowest index."""
    losses, bits, mse = evaluate_all(patches, bundle)
    modes = np.argmin(losses, axis=1)
    if grid is None:
        grid = PatchGrid(patches.shape[2], patches.shape[3] * patches.shape[0], patches.shape[2])
    npix = patches.shape[2] * patches.shape[3]
    return Selection(ModeMap(grid, modes, bundle.M), losses, bits, mse, bundle.lam, npix)


def _grouped(modes: np.ndarray):
    """Patch indices of each used mode, in row-major order, in chunks."""
    for m in np.unique(modes):
        idx = np.flatnonzero(modes == m)
        for start in range(0, idx.size, EVAL_CHUNK):
            yield int(m), idx[start : start + EVAL_CHUNK]


def analyze_patches(patches: np.ndarray, modes: np.ndarray, bundle: CodecBundle) -> list[np.ndarray]:
    latents: list = [None] * patches.shape[0]
    for m, idx in _grouped(modes):
        q = bundle.codecs[m].encode_latents(patches[idx])
        for i, k in enumerate(idx):
            latents[k] = q[i]
    return latents


def synthesize_patches(latents: list[np.ndarray], modes: np.ndarray, bundle: CodecBundle) -> np.ndarray:
    """Clamped reconstruction of every patch; identical on encoder and decoder side."""
    out = None
    for m, idx in _grouped(modes):
        rec = bundle.codecs[m].synthesize(np.stack([latents[k] for k in idx]), clamp=True)
        if out is None:
            out = np.empty((len(latents),) + rec.shape[1:], dtype=rec.dtype)
        out[idx] = rec
    return out


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(*it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda it: fn(*it), items))


@dataclass
class EncodeResult:
    bitstream: bytes
    stats: RDStats  # image-level: distortion on the cropped image, rate from the actual stream
    selection: Selection
    latents: list[np.ndarray]
    reconstruction: np.ndarray
    payload_bytes: int
    ideal_payload_bits: float
    grid: PatchGrid = field(repr=False, default=None)

    @property
    def mode_map(self) -> ModeMap:
        return self.selection.mode_map

    @property
    def mode_map_bits(self) -> int:
        return self.mode_map.bits

    @property
    def total_bits(self) -> int:
        return 8 * len(self.bitstream)

    @property
    def rate_bpp(self) -> float:
        return self.stats.rate_bpp

    @property
    def mode_map_bpp(self) -> float:
        return self.mode_map_bits / (self.grid.height * self.grid.width)

    @property
    def psnr_db(self) -> float:
        return self.stats.psnr_db


def encode_image(image: np.ndarray, bundle: CodecBundle, patch_size: int = 128, threads: int = 1) -> EncodeResult:
    patches, grid = partition(image, patch_size)
    selection = select_modes(patches, bundle, grid)
    modes = selection.modes
    latents = analyze_patches(patches, modes, bundle)
    tables = [build_cdf(c.log_scale) for c in bundle.codecs]
    payloads = _map(lambda q, m: encode_latents(q, tables[m]), list(zip(latents, modes.tolist())), threads)
    header = bs.StreamHeader(grid.height, grid.width, patch_size, bundle.M, bundle.lam, bundle.bundle_id)
    stream = bs.write_stream(header, modes, payloads)

    recon = assemble(synthesize_patches(latents, modes, bundle), grid)
    diff = recon.astype(np.float64) - image
    mse = float((diff * diff).mean())
    ideal = float(sum(rate_estimate(q, bundle.codecs[m].log_scale) for q, m in zip(latents, modes)))
    stats = RDStats(8.0 * len(stream), mse, bundle.lam, grid.height * grid.width)
    return EncodeResult(stream, stats, selection, latents, recon, sum(map(len, payloads)), ideal, grid)


@dataclass
class DecodeResult:
    image: np.ndarray
    latents: list[np.ndarray]
    mode_map: ModeMap
    header: bs.StreamHeader


def decode_bitstream(data: bytes, bundle: CodecBundle, threads: int = 1) -> DecodeResult:
    header, modes, payloads = bs.read_stream(data)
    if header.bundle_id != bundle.bundle_id:
        raise BundleMismatchError(
            f"stream was encoded with bundle {header.bundle_id:#010x}, decoder holds {bundle.bundle_id:#010x}",
            offset=bs.HEADER_BYTES - 4)
    if header.M != bundle.M:
        raise BundleMismatchError(f"stream expects M={header.M}, bundle has M={bundle.M}", offset=16)
    P = header.patch_size
    s = bundle.arch.downsample
    if P % s:
        raise BundleMismatchError(f"patch size {P} incompatible with downsampling {s}", offset=14)
    grid = PatchGrid(header.height, header.width, P)
    shape = (bundle.arch.latent_channels, P // s, P // s)
    tables = [build_cdf(c.log_scale) for c in bundle.codecs]
    latents = _map(lambda p, m: decode_latents(p, tables[m], shape), list(zip(payloads, modes.tolist())), threads)
    image = assemble(synthesize_patches(latents, modes, bundle), grid)
    return DecodeResult(image, latents, ModeMap(grid, modes, bundle.M), header)


def decode_image(data: bytes, bundle: CodecBundle, threads: int = 1) -> np.ndarray:
    return decode_bitstream(data, bundle, threads).image


def constant_mode_losses(selection: Selection) -> np.ndarray:
    """Total loss of forcing each single mode on every patch, shape (M,)."""
    return selection.losses.sum(axis=0)
