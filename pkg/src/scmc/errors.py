"""Exception types shared across the package."""


class ScmcError(Exception):
    """Base class for all errors raised by scmc."""


class ConfigurationError(ScmcError, ValueError):
    """Invalid shapes, architectures or training configuration."""


class UsageError(ScmcError, RuntimeError):
    """An API was called out of order or with arguments outside its domain."""


class BitstreamError(ScmcError):
    """Malformed, truncated or corrupted bitstream.

    ``offset`` is the byte position at which decoding failed.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class BundleMismatchError(BitstreamError):
    """The bitstream was produced with a different codec bundle."""


class ImageFormatError(ScmcError):
    """An image file could not be decoded."""

    def __init__(self, path, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = path
