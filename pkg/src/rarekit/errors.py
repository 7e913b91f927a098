"""Exception hierarchy shared across the toolkit.

Every error the CLI maps to an exit code derives from :class:`RarekitError`;
the ``category`` attribute is the machine-parseable token printed on failure.
"""

from __future__ import annotations


class RarekitError(Exception):
    """Base class for all toolkit errors."""

    category = "error"


class ValidationError(RarekitError):
    """Input violates a documented precondition or invariant."""

    category = "validation"


class ParseError(RarekitError):
    """A text input (manifest, config, sidecar) is malformed.

    ``line`` is the 1-based physical line number when known.
    """

    category = "parse"

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class StoreFormatError(RarekitError):
    """A binary file (embedding store, model checkpoint) is corrupt.

    ``offset`` is the byte offset at which decoding failed.
    """

    category = "format"

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"byte {offset}: {message}"
        super().__init__(message)
        self.offset = offset
