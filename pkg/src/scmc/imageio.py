"""Netpbm (PPM P6 / PGM P5) reading and writing; PNG via Pillow when installed.

Images are returned as float32 arrays of shape (3, H, W) in [0, 1].
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import ImageFormatError

IMAGE_SUFFIXES = (".ppm", ".pgm", ".pnm", ".png")


def _tokens(data: bytes, count: int, path):
    """Read ``count`` whitespace-separated header tokens, skipping # comments."""
    out, i = [], 2
    while len(out) < count:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if i < len(data) and data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j : j + 1].isspace():
            j += 1
        if j == i:
            raise ImageFormatError(path, "truncated header")
        out.append(data[i:j])
        i = j
    # exactly one whitespace byte separates the header from the raster
    return out, i + 1


def decode_netpbm(data: bytes, path="<bytes>") -> np.ndarray:
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(path, f"unsupported netpbm magic {magic!r}")
    try:
        (w, h, maxval), start = _tokens(data, 3, path)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise ImageFormatError(path, f"bad header: {exc}") from None
    if w <= 0 or h <= 0 or not 0 < maxval < 65536:
        raise ImageFormatError(path, f"bad header values {w}x{h} maxval={maxval}")
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = w * h * channels * dtype.itemsize
    raster = data[start : start + need]
    if len(raster) != need:
        raise ImageFormatError(path, f"raster truncated: expected {need} bytes, found {len(raster)}")
    arr = np.frombuffer(raster, dtype=dtype).reshape(h, w, channels)
    img = arr.astype(np.float32) / np.float32(maxval)
    if channels == 1:
        img = np.repeat(img, 3, axis=2)
    return np.ascontiguousarray(img.transpose(2, 0, 1))


def read_image(path) -> np.ndarray:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ImageFormatError(path, f"cannot read: {exc.strerror}") from None
    if data[:2] in (b"P5", b"P6"):
        return decode_netpbm(data, path)
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        try:
            from PIL import Image
        except ImportError:
            raise ImageFormatError(path, "PNG input requires Pillow") from None
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
        return np.ascontiguousarray(arr.transpose(2, 0, 1))
    raise ImageFormatError(path, "not a PPM/PGM/PNG file")


def to_uint8(img: np.ndarray) -> np.ndarray:
    """(3,H,W) float in [0,1] -> (H,W,3) uint8 with rounding."""
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)


def quantize_8bit(img: np.ndarray) -> np.ndarray:
    """The float image a PPM round trip would give back."""
    return np.ascontiguousarray(to_uint8(img).transpose(2, 0, 1)).astype(np.float32) / np.float32(255.0)


def encode_ppm(img: np.ndarray) -> bytes:
    raster = to_uint8(img)
    h, w, _ = raster.shape
    return f"P6\n{w} {h}\n255\n".encode() + raster.tobytes()


def encode_pgm(gray: np.ndarray) -> bytes:
    gray = np.asarray(gray, dtype=np.uint8)
    h, w = gray.shape
    return f"P5\n{w} {h}\n255\n".encode() + gray.tobytes()


def atomic_write(path, data: bytes) -> None:
    """Write to a temporary file in the target directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_ppm(path, img: np.ndarray) -> None:
    atomic_write(path, encode_ppm(img))


def write_pgm(path, gray: np.ndarray) -> None:
    atomic_write(path, encode_pgm(gray))


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise ImageFormatError(directory, "not a directory")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file())
