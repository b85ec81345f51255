"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition."""


class FileFormatError(Exception):
    """A binary payload does not match its declared format."""


class CorruptImageError(FileFormatError):
    """An IMGF or PPM payload is malformed, truncated, or non-finite."""


class CorruptModelError(FileFormatError):
    """A CITM weight file is malformed or internally inconsistent."""


class BackendFailure(Exception):
    """An external classifier backend timed out, errored, or violated the wire protocol."""


class TrainingFailure(Exception):
    """Training diverged (non-finite loss)."""
