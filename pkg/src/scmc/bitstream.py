"""Bitstream container.

All integers little-endian::

    b"SCB1"  u16 version  u32 H  u32 W  u16 P  u16 M  f64 lambda  u32 bundle_id
    mode map: ceil(log2 M) bits per patch, MSB-first, row-major, zero-padded to a byte
    K x (u32 byte length, range-coded latents of one patch), row-major
    u32 CRC-32 of every preceding byte
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import BitstreamError

MAGIC = b"SCB1"
VERSION = 1
_HEADER = struct.Struct("<4sHIIHHdI")
HEADER_BYTES = _HEADER.size
CHECKSUM_BYTES = 4


def bits_per_mode(M: int) -> int:
    return 0 if M <= 1 else math.ceil(math.log2(M))


@dataclass(frozen=True)
class StreamHeader:
    height: int
    width: int
    patch_size: int
    M: int
    lam: float
    bundle_id: int

    @property
    def grid_shape(self) -> tuple[int, int]:
        return -(-self.height // self.patch_size), -(-self.width // self.patch_size)


def pack_mode_map(modes, M: int) -> bytes:
    nbits = bits_per_mode(M)
    if nbits == 0:
        return b""
    modes = np.asarray(modes, dtype=np.int64).ravel()
    bits = ((modes[:, None] >> np.arange(nbits - 1, -1, -1)) & 1).astype(np.uint8).ravel()
    return np.packbits(bits).tobytes()


def unpack_mode_map(data: bytes, K: int, M: int) -> np.ndarray:
    nbits = bits_per_mode(M)
    if nbits == 0:
        return np.zeros(K, dtype=np.int64)
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))[: K * nbits].reshape(K, nbits)
    return (bits.astype(np.int64) << np.arange(nbits - 1, -1, -1)).sum(axis=1)


def mode_map_bytes(K: int, M: int) -> int:
    return -(-K * bits_per_mode(M) // 8)


def write_stream(header: StreamHeader, modes, payloads: list[bytes]) -> bytes:
    parts = [
        _HEADER.pack(MAGIC, VERSION, header.height, header.width, header.patch_size, header.M, header.lam,
                     header.bundle_id),
        pack_mode_map(modes, header.M),
    ]
    for p in payloads:
        parts.append(struct.pack("<I", len(p)))
        parts.append(p)
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def read_stream(data: bytes) -> tuple[StreamHeader, np.ndarray, list[bytes]]:
    """Parse and validate a stream; raises BitstreamError with the failing offset."""
    if len(data) < HEADER_BYTES:
        raise BitstreamError("stream shorter than its header", offset=len(data))
    magic, version, h, w, p, m, lam, bundle_id = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise BitstreamError(f"bad magic {magic!r}", offset=0)
    if version != VERSION:
        raise BitstreamError(f"unsupported version {version}", offset=4)
    if h == 0 or w == 0 or p == 0 or m == 0:
        raise BitstreamError("header has zero dimension, patch size or mode count", offset=6)
    header = StreamHeader(h, w, p, m, lam, bundle_id)
    kh, kw = header.grid_shape
    K = kh * kw
    pos = HEADER_BYTES
    nmap = mode_map_bytes(K, m)
    if pos + nmap > len(data):
        raise BitstreamError("truncated mode map", offset=len(data))
    modes = unpack_mode_map(data[pos : pos + nmap], K, m)
    if (modes >= m).any():
        raise BitstreamError("mode index out of range", offset=pos)
    pos += nmap
    payloads = []
    for k in range(K):
        if pos + 4 > len(data):
            raise BitstreamError(f"truncated length prefix of patch {k}", offset=len(data))
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + n > len(data):
            raise BitstreamError(f"truncated payload of patch {k}", offset=len(data))
        payloads.append(data[pos : pos + n])
        pos += n
    if pos + CHECKSUM_BYTES > len(data):
        raise BitstreamError("missing trailing checksum", offset=len(data))
    (crc,) = struct.unpack_from("<I", data, pos)
    if zlib.crc32(data[:pos]) != crc:
        raise BitstreamError("stream checksum mismatch", offset=pos)
    if pos + CHECKSUM_BYTES != len(data):
        raise BitstreamError("trailing bytes after checksum", offset=pos + CHECKSUM_BYTES)
    return header, modes, payloads
