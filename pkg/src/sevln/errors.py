"""Exception types shared across the package.

Every error raised on purpose derives from SevlnError so callers can catch
one base class at module boundaries.
"""

from __future__ import annotations


class SevlnError(Exception):
    """Base class for all errors raised by this package."""


class WorldFormatError(SevlnError):
    """World or episode file could not be parsed at all."""

    def __init__(self, message: str, *, path: str | None = None, locus: str | None = None):
        self.path = path
        self.locus = locus
        detail = message
        if path:
            detail = f"{path}: {detail}"
        if locus:
            detail = f"{detail} (at {locus})"
        super().__init__(detail)


class WorldValidationError(SevlnError):
    """Parsed world or episode data violates a structural constraint."""

    def __init__(self, message: str, *, path: str | None = None, locus: str | None = None):
        self.path = path
        self.locus = locus
        detail = message
        if path:
            detail = f"{path}: {detail}"
        if locus:
            detail = f"{detail} (at {locus})"
        super().__init__(detail)


class InvalidActionError(SevlnError):
    """A step was attempted that the current state does not allow."""


class UnreachableError(SevlnError):
    """No path exists between the two requested nodes."""


class BackendError(SevlnError):
    """A model backend failed to produce a reply."""


class ConfigError(SevlnError):
    """A configuration value is missing or inconsistent."""


class AnnotationError(SevlnError):
    """Scene annotation failed or produced an empty description."""


class ExtractionError(SevlnError):
    """Landmark extraction failed before a fallback could apply."""


class EmbeddingError(SevlnError):
    """An embedding could not be computed or has zero norm."""


class DimensionMismatchError(SevlnError):
    """Vector dimension does not match the repository dimension."""


class InvalidEntryError(SevlnError):
    """An experience entry violates its structural invariants."""


class RepoFormatError(SevlnError):
    """An experience repository file failed to parse or validate."""

    def __init__(self, message: str, *, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        detail = message
        if path:
            detail = f"{path}: {detail}"
        if line is not None:
            detail = f"{detail} (line {line})"
        super().__init__(detail)


class BudgetError(SevlnError):
    """Prompt budget is smaller than the irreducible prompt sections."""


class DecideError(SevlnError):
    """The decision step failed for reasons other than a malformed reply."""
