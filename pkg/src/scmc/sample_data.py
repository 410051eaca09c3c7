"""Natural test images from scikit-image's bundled sample data (optional dependency)."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .imageio import write_ppm

TEST_IMAGES = ("astronaut", "chelsea", "coffee", "rocket", "immunohistochemistry")
TRAIN_IMAGES = ("cat", "hubble_deep_field", "colorwheel", "retina", "brick", "grass", "gravel", "camera", "moon",
                "clock")


def _downscale(img: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return img
    _, h, w = img.shape
    h2, w2 = h // factor, w // factor
    return img[:, : h2 * factor, : w2 * factor].reshape(3, h2, factor, w2, factor).mean(axis=(2, 4))


def load(name: str, factor: int = 2, max_side: int | None = None) -> np.ndarray:
    """(3, H, W) float32 in [0, 1]; gray images are replicated, alpha is dropped."""
    try:
        from skimage import data
    except ImportError as exc:  # pragma: no cover
        raise ImportError("sample images need scikit-image (pip install scikit-image)") from exc
    arr = np.asarray(getattr(data, name)())
    if arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=2)
    arr = arr[..., :3].astype(np.float32) / 255.0
    img = arr.transpose(2, 0, 1)
    if max_side is not None:
        while max(img.shape[1:]) // factor > max_side:
            factor *= 2
    return np.ascontiguousarray(_downscale(img, factor).astype(np.float32))


def write_images(directory, names=TEST_IMAGES, factor: int = 2, max_side: int | None = 320) -> list[Path]:
    """Write the named sample images as 8-bit PPM files; returns their paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in names:
        path = directory / f"{name}.ppm"
        write_ppm(path, load(name, factor, max_side))
        paths.append(path)
    return paths
