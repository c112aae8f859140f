"""Exception hierarchy shared across the toolkit.

Binary-format errors carry enough context (layer id, byte offset) to point
at the offending spot in a stream; everything else is a plain message.
"""

from __future__ import annotations


class CbirError(Exception):
    """Base class for all cbirkit errors."""


# ---------------------------------------------------------------------------
# Binary container formats (FMAP / INDX / DESC)
# ---------------------------------------------------------------------------

class FormatError(CbirError):
    """Malformed or unreadable binary container."""

    def __init__(self, message: str, *, offset: int | None = None,
                 layer_id: str | None = None):
        parts = [message]
        if layer_id is not None:
            parts.append(f"layer={layer_id!r}")
        if offset is not None:
            parts.append(f"offset={offset}")
        super().__init__(" ".join(parts))
        self.offset = offset
        self.layer_id = layer_id


class BadMagic(FormatError):
    pass


class UnsupportedVersion(FormatError):
    pass


class TruncatedStream(FormatError):
    pass


class NonFiniteValue(FormatError):
    pass


class ZeroDimension(FormatError):
    pass


class EmptyLayerSet(FormatError):
    pass


class ChecksumMismatch(FormatError):
    pass


# ---------------------------------------------------------------------------
# Descriptor computation
# ---------------------------------------------------------------------------

class RegionOutOfBounds(CbirError):
    pass


class UnknownLayerId(CbirError):
    pass


class EmptyScaleList(CbirError):
    pass


class BranchCountMismatch(CbirError):
    pass


class BalanceWarning(UserWarning):
    """Branch dimensions are unbalanced beyond the configured tolerance."""


# ---------------------------------------------------------------------------
# Index and retrieval
# ---------------------------------------------------------------------------

class DimensionMismatch(CbirError):
    pass


class EmptyIndex(CbirError):
    pass


class KOutOfRange(CbirError):
    pass


class UnknownClass(CbirError):
    pass


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

class MissingTruth(CbirError):
    pass


class MissingResult(CbirError):
    pass
