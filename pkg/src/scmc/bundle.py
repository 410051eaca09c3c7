"""The set of M competing codecs and its binary file format.

Layout (little-endian)::

    b"SCMC"  u16 version
    u16 C
    u16 n_analysis  then per layer: u8 kind, u16 in, u16 out, u8 kernel, u8 stride, f32 slope
    u16 n_synthesis then per layer: same
    u16 M   f64 lambda
    per mode: all parameters as f32, analysis -> synthesis -> log scales
    u32 CRC-32 of every preceding byte

The trailing CRC doubles as the bundle id written into every bitstream.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codec import Codec, CodecArch, LayerSpec
from .errors import ConfigurationError
from .imageio import atomic_write

MAGIC = b"SCMC"
VERSION = 1
_KINDS = ("conv", "upsample-nearest", "leaky-relu")
_LAYER = struct.Struct("<BHHBBf")


@dataclass
class CodecBundle:
    arch: CodecArch
    codecs: list[Codec]
    lam: float

    def __post_init__(self):
        if not self.codecs:
            raise ConfigurationError("a bundle needs at least one codec")
        if any(c.arch != self.arch for c in self.codecs):
            raise ConfigurationError("all modes must share one architecture")

    @property
    def M(self) -> int:
        return len(self.codecs)

    @classmethod
    def random(cls, arch: CodecArch, M: int, lam: float, seed: int = 0) -> "CodecBundle":
        rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(M)]
        return cls(arch, [Codec(arch, rng=r) for r in rngs], lam)

    def copy(self) -> "CodecBundle":
        return CodecBundle(self.arch, [c.copy() for c in self.codecs], self.lam)

    def to_bytes(self) -> bytes:
        body = _pack_body(self)
        return body + struct.pack("<I", zlib.crc32(body))

    @property
    def bundle_id(self) -> int:
        return zlib.crc32(_pack_body(self))

    def save(self, path) -> None:
        atomic_write(path, self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "CodecBundle":
        return unpack_bundle(data)

    @classmethod
    def load(cls, path) -> "CodecBundle":
        return unpack_bundle(Path(path).read_bytes())


def _pack_layers(layers) -> bytes:
    out = [struct.pack("<H", len(layers))]
    for s in layers:
        out.append(_LAYER.pack(_KINDS.index(s.kind), s.in_ch, s.out_ch, s.kernel, s.stride, s.negative_slope))
    return b"".join(out)


def _pack_body(bundle: CodecBundle) -> bytes:
    arch = bundle.arch
    parts = [
        MAGIC,
        struct.pack("<HH", VERSION, arch.latent_channels),
        _pack_layers(arch.analysis),
        _pack_layers(arch.synthesis),
        struct.pack("<Hd", bundle.M, bundle.lam),
    ]
    for codec in bundle.codecs:
        for p in codec.parameters():
            parts.append(np.ascontiguousarray(p, dtype="<f4").tobytes())
    return b"".join(parts)


def unpack_bundle(data: bytes) -> CodecBundle:
    try:
        return _unpack(data)
    except (struct.error, IndexError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"malformed bundle: {exc}") from exc


def _unpack(data: bytes) -> CodecBundle:
    if len(data) < 8 or data[:4] != MAGIC:
        raise ConfigurationError("not a codec bundle (bad magic)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise ConfigurationError("bundle checksum mismatch")
    version, c = struct.unpack_from("<HH", data, 4)
    if version != VERSION:
        raise ConfigurationError(f"unsupported bundle version {version}")
    pos = 8

    def layers():
        nonlocal pos
        (n,) = struct.unpack_from("<H", data, pos)
        pos += 2
        out = []
        for _ in range(n):
            kind, i, o, k, s, slope = _LAYER.unpack_from(data, pos)
            pos += _LAYER.size
            out.append(LayerSpec(_KINDS[kind], i, o, k, s, round(slope, 6)))
        return tuple(out)

    arch = CodecArch(c, layers(), layers())
    m, lam = struct.unpack_from("<Hd", data, pos)
    pos += struct.calcsize("<Hd")
    codecs = []
    for _ in range(m):
        codec = Codec.zeros(arch)
        for p in codec.parameters():
            n = p.size
            p[...] = np.frombuffer(data, dtype="<f4", count=n, offset=pos).reshape(p.shape)
            pos += 4 * n
        codecs.append(codec)
    if pos != len(body):
        raise ConfigurationError(f"bundle has {len(body) - pos} unexpected trailing bytes")
    return CodecBundle(arch, codecs, lam)
