"""Exception taxonomy shared across the package."""


class ContractError(ValueError):
    """An argument violates a documented precondition (shape, range, missing state)."""


class ImageError(Exception):
    """Base class for image decode/encode failures."""


class UnsupportedFormatError(ImageError):
    """File exists but is not a raster format we read (PNG RGB8 or PPM P6)."""


class ChannelCountError(ImageError):
    """Decoded image does not carry exactly three 8-bit channels."""


class CheckpointError(Exception):
    """Base class for checkpoint load failures."""


class CorruptCheckpointError(CheckpointError):
    """Bad magic, unparseable manifest, or truncated tensor payload."""


class CheckpointVersionError(CheckpointError):
    """Container version not understood by this build."""


class CheckpointShapeError(CheckpointError):
    """Manifest shapes disagree with the declared network layout."""


class DenoiserError(Exception):
    """Base class for external denoiser hook failures."""


class DenoiserSpawnError(DenoiserError):
    """The external command could not be started."""


class DenoiserExitError(DenoiserError):
    """The external command ran but exited nonzero."""


class DenoiserOutputError(DenoiserError):
    """The external command produced a missing, unreadable, or wrong-shape image."""
