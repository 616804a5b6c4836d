"""Exception hierarchy shared by all stages."""


class CrystalsegError(Exception):
    """Base class for errors raised by crystalseg."""


class ImageFormatError(CrystalsegError, ValueError):
    """Malformed, unsupported or non-grayscale image file."""


class ContractError(CrystalsegError, ValueError):
    """Inputs violate a data contract (shape mismatch, schema, feature config)."""


class ModelFormatError(CrystalsegError, ValueError):
    """Model file is truncated, from another format version or otherwise unreadable."""
