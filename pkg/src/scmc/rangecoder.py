"""Static-model range coder (carry-less, 64-bit state, byte renormalization).

Symbol frequencies are integers with a fixed total of 2^16. The coder is
integer-only, so a given (symbols, tables) pair always produces the same bytes.

The flush emits the fewest bytes that pin the final interval and trailing
zero bytes are dropped; the decoder reads zeros past the end of its input.
An empty symbol sequence therefore encodes to zero bytes.
"""

from __future__ import annotations

from bisect import bisect_right

import numpy as np

from .codec import ALPHABET_MIN, ALPHABET_SIZE, probability_table

PRECISION = 16
TOTAL = 1 << PRECISION
STATE_BITS = 64
MASK = (1 << STATE_BITS) - 1
TOP = 1 << (STATE_BITS - 8)
BOT = 1 << (STATE_BITS - 16)


def quantize_frequencies(probs: np.ndarray, total: int = TOTAL) -> np.ndarray:
    """Integer frequencies >= 1 summing to ``total``, roughly proportional to ``probs``.

    Floor, lift zeros to 1, then hand out (or take back) the difference by
    largest (smallest) fractional part, lowest index first on ties.
    """
    probs = np.asarray(probs, dtype=np.float64)
    n = probs.size
    if n > total:
        raise ValueError("alphabet larger than frequency total")
    scaled = probs / probs.sum() * total
    freq = np.maximum(np.floor(scaled).astype(np.int64), 1)
    frac = scaled - np.floor(scaled)
    deficit = total - int(freq.sum())
    if deficit > 0:
        order = np.lexsort((np.arange(n), -frac))
        freq[order[:deficit]] += 1
    while deficit < 0:
        order = np.lexsort((np.arange(n), frac))
        for i in order:
            if deficit == 0:
                break
            if freq[i] > 1:
                freq[i] -= 1
                deficit += 1
    return freq


class CdfTable:
    """Cumulative frequencies for each channel over the latent alphabet."""

    def __init__(self, freqs: np.ndarray):
        freqs = np.atleast_2d(np.asarray(freqs, dtype=np.int64))
        if (freqs < 1).any() or (freqs.sum(axis=1) != TOTAL).any():
            raise ValueError("every frequency must be >= 1 and each row must sum to 2^16")
        self.freqs = freqs
        cdf = np.zeros((freqs.shape[0], freqs.shape[1] + 1), dtype=np.int64)
        np.cumsum(freqs, axis=1, out=cdf[:, 1:])
        self.cdf = cdf
        # plain lists are much faster than numpy scalars in the coding loops
        self._cdf_lists = [row.tolist() for row in cdf]

    @property
    def channels(self) -> int:
        return self.freqs.shape[0]

    def ideal_bits(self, symbols: np.ndarray, channels: np.ndarray) -> float:
        idx = np.asarray(symbols, dtype=np.int64) - ALPHABET_MIN
        f = self.freqs[np.asarray(channels), idx]
        return float(-np.log2(f / TOTAL).sum())


def build_cdf(log_scale: np.ndarray, channel: int | None = None) -> CdfTable:
    """CDF table for one channel, or all channels when ``channel`` is None."""
    probs = probability_table(np.atleast_1d(log_scale))
    if channel is not None:
        probs = probs[channel : channel + 1]
    return CdfTable(np.stack([quantize_frequencies(p) for p in probs]))


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = MASK
        self.out = bytearray()
        self._done = False

    def encode(self, cum: int, freq: int) -> None:
        r = self.range >> PRECISION
        self.low += cum * r
        self.range = freq * r
        self._normalize()

    def _normalize(self) -> None:
        low, rng, out = self.low, self.range, self.out
        while True:
            if (low ^ (low + rng)) < TOP:
                pass
            elif rng < BOT:
                rng = -low & (BOT - 1)
            else:
                break
            out.append(low >> (STATE_BITS - 8))
            low = (low << 8) & MASK
            rng = (rng << 8) & MASK
        self.low, self.range = low, rng

    def finish(self) -> bytes:
        if not self._done:
            low, high = self.low, self.low + self.range
            for nbytes in range(STATE_BITS // 8 + 1):
                unit = 1 << (STATE_BITS - 8 * nbytes)
                v = -(-low // unit) * unit
                if v < high:
                    break
            for i in range(nbytes):
                self.out.append((v >> (STATE_BITS - 8 - 8 * i)) & 0xFF)
            while self.out and self.out[-1] == 0:
                self.out.pop()
            self._done = True
        return bytes(self.out)


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.low = 0
        self.range = MASK
        code = 0
        for _ in range(STATE_BITS // 8):
            code = (code << 8) | self._next_byte()
        self.code = code

    def _next_byte(self) -> int:
        pos = self.pos
        self.pos += 1
        return self.data[pos] if pos < len(self.data) else 0

    def decode(self, cdf: list[int]) -> int:
        """Return the alphabet index of the next symbol under ``cdf``."""
        r = self.range >> PRECISION
        target = (self.code - self.low) // r
        if target >= TOTAL:
            target = TOTAL - 1  # only reachable on corrupted input
        idx = bisect_right(cdf, target) - 1
        self.low += cdf[idx] * r
        self.range = (cdf[idx + 1] - cdf[idx]) * r
        low, rng, code = self.low, self.range, self.code
        while True:
            if (low ^ (low + rng)) < TOP:
                pass
            elif rng < BOT:
                rng = -low & (BOT - 1)
            else:
                break
            code = ((code << 8) | self._next_byte()) & MASK
            low = (low << 8) & MASK
            rng = (rng << 8) & MASK
        self.low, self.range, self.code = low, rng, code
        return idx


def encode_symbols(symbols, tables: CdfTable, channels=None) -> bytes:
    """Range-code alphabet symbols; ``channels[i]`` selects the table row of symbol i."""
    symbols = np.asarray(symbols, dtype=np.int64).ravel()
    channels = np.zeros(symbols.size, dtype=np.int64) if channels is None else np.asarray(channels).ravel()
    if symbols.size and (symbols.min() < ALPHABET_MIN or symbols.max() >= ALPHABET_MIN + ALPHABET_SIZE):
        raise ValueError("symbol outside alphabet")
    enc = RangeEncoder()
    cdfs = tables._cdf_lists
    for s, c in zip((symbols - ALPHABET_MIN).tolist(), channels.tolist()):
        row = cdfs[c]
        enc.encode(row[s], row[s + 1] - row[s])
    return enc.finish()


def decode_symbols(data: bytes, tables: CdfTable, count: int, channels=None) -> np.ndarray:
    channels = np.zeros(count, dtype=np.int64) if channels is None else np.asarray(channels).ravel()
    dec = RangeDecoder(data)
    cdfs = tables._cdf_lists
    out = [dec.decode(cdfs[c]) for c in channels.tolist()]
    return np.asarray(out, dtype=np.int64) + ALPHABET_MIN


def latent_channels(shape) -> np.ndarray:
    """Channel index of each element of a channel-major (C, h, w) grid."""
    c, h, w = shape
    return np.repeat(np.arange(c), h * w)


def encode_latents(latents: np.ndarray, tables: CdfTable) -> bytes:
    return encode_symbols(latents.ravel(), tables, latent_channels(latents.shape))


def decode_latents(data: bytes, tables: CdfTable, shape) -> np.ndarray:
    count = int(np.prod(shape))
    return decode_symbols(data, tables, count, latent_channels(shape)).reshape(shape).astype(np.int32)
