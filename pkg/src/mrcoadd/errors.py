"""Exceptions shared by the on-disk codecs and the engine."""

from __future__ import annotations


class FormatError(ValueError):
    """Base class for malformed raster, container or catalog bytes."""

    code = "format"


class BadMagicError(FormatError):
    code = "bad-magic"


class VersionMismatchError(FormatError):
    code = "version-mismatch"


class TruncatedError(FormatError):
    code = "truncated"


class CorruptSplitError(FormatError):
    """A file split disagrees with its container's index."""

    code = "corrupt-split"


class UnknownContainerError(KeyError):
    code = "unknown-container"


class MissingArtifactError(RuntimeError):
    """A strategy needs a database artifact (raw tree, containers, catalog) that is absent."""


class MapperError(RuntimeError):
    """A map task failed; carries the key of the record being processed."""

    def __init__(self, key: str, cause: BaseException):
        super().__init__(f"mapper failed on record {key}: {cause!r}")
        self.key = key
        self.cause = cause
