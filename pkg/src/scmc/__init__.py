"""Spatially competing learned image codecs.

A bundle of M small autoencoder codecs, specialized on clusters of training
patches, competes per P x P patch of an image at encoding time; the winning
index of every patch is sent as a fixed-length mode map.
"""

__version__ = "0.1.0"

from .bundle import CodecBundle
from .codec import Codec, CodecArch, RDStats, rd_loss
from .competition import PatchGrid, decode_image, encode_image, mode_map_rate_bpp, partition, select_modes
from .errors import BitstreamError, BundleMismatchError, ConfigurationError, ImageFormatError, ScmcError, UsageError
from .metrics import bd_rate, complexity_report, mac_count, psnr
from .trainer import TrainConfig, train, train_on_patches

__all__ = [
    "CodecBundle", "Codec", "CodecArch", "RDStats", "rd_loss",
    "PatchGrid", "decode_image", "encode_image", "mode_map_rate_bpp", "partition", "select_modes",
    "BitstreamError", "BundleMismatchError", "ConfigurationError", "ImageFormatError", "ScmcError", "UsageError",
    "bd_rate", "complexity_report", "mac_count", "psnr",
    "TrainConfig", "train", "train_on_patches",
]
