"""Exceptions for the binary buffer and checkpoint files."""


class FileFormatError(ValueError):
    pass


class BadMagic(FileFormatError):
    pass


class VersionMismatch(FileFormatError):
    pass


class TruncatedFile(FileFormatError):
    pass


class CheckpointError(RuntimeError):
    """A checkpoint could not be read or does not fit the requested task."""
