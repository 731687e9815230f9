"""Exception hierarchy for the spoi engine.

Every error raised by the package derives from StoreError so embedders can
catch one type. CLI exit codes: user errors map to 1, corruption to 2.
"""

from __future__ import annotations


class StoreError(Exception):
    """Base class for all engine errors."""


class ConfigError(StoreError):
    """Invalid engine or partitioning configuration."""


class CapacityError(StoreError):
    """A hard structural limit was exceeded (ids, partitions, pages)."""


class ModelError(StoreError):
    """A statement violates relation typing rules."""


class UnsupportedError(StoreError):
    """Recognized but unsupported feature (e.g. vector-similarity storage)."""


class NotFoundError(StoreError):
    """Lookup of an unknown GUI, SID or lexical."""


class WrongKindError(StoreError):
    """A GUI of one kind was used where another kind is required."""


class ParseError(StoreError):
    """Access pattern expression rejected; carries the character offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class LoadError(StoreError):
    """Bulk load input rejected (missing column, bad reference, bad literal)."""


class ConflictError(StoreError):
    """Write-write conflict; the losing transaction has been aborted."""


class StateError(StoreError):
    """Operation applied to a transaction handle in the wrong state."""


class ThrottleError(StoreError):
    """Transaction table full; caller should retry later."""


class CorruptionError(StoreError):
    """Persistent state failed validation (bad magic, impossible layout)."""
