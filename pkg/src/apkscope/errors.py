"""Exception hierarchy shared across the package."""

from __future__ import annotations


class ApkScopeError(Exception):
    pass


# --- ingestion ---------------------------------------------------------------


class IngestError(ApkScopeError):
    pass


class NotZip(IngestError):
    def __init__(self, path):
        super().__init__(f"{path}: not a ZIP container (bad magic)")
        self.path = path


class MissingManifest(IngestError):
    def __init__(self, path, entry="AndroidManifest.xml"):
        super().__init__(f"{path}: missing entry {entry!r}")
        self.path = path
        self.entry = entry


class MissingDex(IngestError):
    def __init__(self, path, entry="classes.dex"):
        super().__init__(f"{path}: missing entry {entry!r}")
        self.path = path
        self.entry = entry


class MalformedAxml(IngestError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset:#x})")
        self.offset = offset


class MalformedXml(IngestError):
    pass


class BadDexMagic(IngestError):
    def __init__(self, magic: bytes):
        super().__init__(f"unsupported dex magic {magic!r}")
        self.magic = magic


class TruncatedSection(IngestError):
    def __init__(self, section: str, expected: int, available: int):
        super().__init__(
            f"dex section {section!r} truncated: needs {expected} bytes, {available} available"
        )
        self.section = section
        self.expected = expected
        self.available = available


class IndexOutOfRange(IngestError):
    def __init__(self, table: str, index: int, size: int):
        super().__init__(f"index {index} out of range for {table} (size {size})")
        self.table = table
        self.index = index
        self.size = size


class ChecksumMismatch(IngestError):
    pass


# --- features ----------------------------------------------------------------


class MapNotLoaded(ApkScopeError):
    pass


# --- prompts -----------------------------------------------------------------


class PromptError(ApkScopeError):
    pass


class NotEnoughShots(PromptError):
    pass


class SubtypeMismatch(PromptError):
    pass


class MissingSummary(PromptError):
    pass


class UnresolvedPlaceholder(PromptError):
    pass


class EmptyReply(PromptError):
    pass


class AltReplyParseError(PromptError):
    """A JSON reply from an alternative workflow did not match its schema."""


# --- gateway -----------------------------------------------------------------


class GatewayError(ApkScopeError):
    retryable = False


class ProviderTimeout(GatewayError):
    retryable = True


class HttpStatus(GatewayError):
    def __init__(self, code: int, body: str = ""):
        super().__init__(f"provider returned HTTP {code}: {body[:200]}")
        self.code = code
        self.retryable = code == 429 or code >= 500


class ProviderConnectionError(GatewayError):
    retryable = True


class Exhausted(GatewayError):
    def __init__(self, attempts: int, last: Exception):
        super().__init__(f"gave up after {attempts} attempts: {last}")
        self.attempts = attempts
        self.last = last


class MalformedProviderReply(GatewayError):
    pass


# --- memory ------------------------------------------------------------------


class StoreError(ApkScopeError):
    pass


class ConflictingEntry(StoreError):
    def __init__(self, key, existing: str, new: str):
        super().__init__(f"{key}: stored {existing!r}, refusing {new!r}")
        self.key = key
        self.existing = existing
        self.new = new


class StoreUnavailable(StoreError):
    pass


# --- representation / classifier --------------------------------------------


class DimMismatch(ApkScopeError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"dimension mismatch: expected {expected}, got {got}")
        self.expected = expected
        self.got = got


class UnknownMode(ApkScopeError):
    pass


class SingleClassTraining(ApkScopeError):
    pass


class NonFiniteLoss(ApkScopeError):
    def __init__(self, epoch: int):
        super().__init__(f"loss became non-finite at epoch {epoch}")
        self.epoch = epoch


class EmptyTestSplit(ApkScopeError):
    pass


class ConfigError(ApkScopeError):
    pass
