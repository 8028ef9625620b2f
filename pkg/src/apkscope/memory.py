"""Persistent feature -> function description cache (JSON lines, first write wins)."""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .errors import ConflictingEntry, StoreUnavailable
from .features import FEATURE_TYPES


@dataclass(frozen=True)
class MemoryKey:
    feature_type: str
    feature_name: str

    def __post_init__(self):
        if self.feature_type not in FEATURE_TYPES:
            raise ValueError(f"feature_type must be one of {FEATURE_TYPES}, not {self.feature_type!r}")
        if not self.feature_name:
            raise ValueError("feature_name must be non-empty")


class EntrySource(str, Enum):
    LLM = "llm"
    IMPORT = "import"


@dataclass(frozen=True)
class MemoryEntry:
    key: MemoryKey
    function_text: str
    created_at: float
    source: EntrySource = EntrySource.LLM

    def __post_init__(self):
        if not self.function_text.strip() or "\n" in self.function_text:
            raise ValueError("function_text must be a non-empty single line")

    def to_json(self) -> dict:
        return {
            "feature_type": self.key.feature_type,
            "feature_name": self.key.feature_name,
            "function_text": self.function_text,
            "created_at": self.created_at,
            "source": self.source.value,
        }

    @classmethod
    def from_json(cls, d: dict) -> MemoryEntry:
        return cls(
            MemoryKey(d["feature_type"], d["feature_name"]),
            d["function_text"],
            float(d.get("created_at", 0.0)),
            EntrySource(d.get("source", "llm")),
        )


@dataclass
class MemoryStats:
    hits: int = 0
    misses: int = 0

    @property
    def lookups(self) -> int:
        return self.hits + self.misses

    @property
    def hit_rate(self) -> float | None:
        return self.hits / self.lookups if self.lookups else None


class FunctionMemory:
    """In-memory dict backed by an append-only JSONL file.

    ``path=None`` keeps the store purely in memory. ``enabled=False`` turns every
    lookup into a miss and every insert into a no-op (the no-memory ablation).
    """

    def __init__(self, path=None, enabled: bool = True, clock=time.time):
        self.path = Path(path) if path is not None else None
        self.enabled = enabled
        self.clock = clock
        self.stats = MemoryStats()
        self._entries: dict[MemoryKey, MemoryEntry] = {}
        self._write_lock = threading.Lock()
        self._stat_lock = threading.Lock()
        if enabled and self.path is not None:
            self._load()

    def _load(self):
        if not self.path.exists():
            return
        try:
            lines = self.path.read_text("utf-8").splitlines()
        except OSError as exc:
            raise StoreUnavailable(f"{self.path}: {exc}") from exc
        for lineno, line in enumerate(lines, 1):
            if not line.strip():
                continue
            try:
                entry = MemoryEntry.from_json(json.loads(line))
            except (ValueError, KeyError) as exc:
                raise StoreUnavailable(f"{self.path}:{lineno}: corrupt entry ({exc})") from exc
            self._entries.setdefault(entry.key, entry)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: MemoryKey) -> bool:
        return key in self._entries

    def entries(self) -> list[MemoryEntry]:
        return sorted(self._entries.values(), key=lambda e: (e.key.feature_type, e.key.feature_name))

    def lookup(self, key: MemoryKey) -> MemoryEntry | None:
        entry = self._entries.get(key) if self.enabled else None
        with self._stat_lock:
            if entry is None:
                self.stats.misses += 1
            else:
                self.stats.hits += 1
        return entry

    def _append(self, entries: list[MemoryEntry]):
        if self.path is None or not entries:
            return
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                for e in entries:
                    fh.write(json.dumps(e.to_json(), ensure_ascii=False) + "\n")
        except OSError as exc:
            raise StoreUnavailable(f"{self.path}: {exc}") from exc

    def insert(self, entry: MemoryEntry) -> MemoryEntry:
        """Store ``entry``; returns the entry now held for its key."""
        if not self.enabled:
            return entry
        with self._write_lock:
            existing = self._entries.get(entry.key)
            if existing is not None:
                if existing.function_text != entry.function_text:
                    raise ConflictingEntry(entry.key, existing.function_text, entry.function_text)
                return existing
            self._append([entry])
            self._entries[entry.key] = entry
            return entry

    def put(self, feature_type: str, feature_name: str, function_text: str) -> MemoryEntry:
        return self.insert(MemoryEntry(MemoryKey(feature_type, feature_name), function_text, self.clock()))

    def export(self, path) -> int:
        entries = self.entries()
        with Path(path).open("w", encoding="utf-8") as fh:
            for e in entries:
                fh.write(json.dumps(e.to_json(), ensure_ascii=False) + "\n")
        return len(entries)

    def import_(self, path, force: bool = False) -> tuple[int, int]:
        """Merge a JSONL export. Returns (added, replaced).

        Conflicts raise unless ``force``; forced replacements rewrite the file.
        """
        incoming = []
        for line in Path(path).read_text("utf-8").splitlines():
            if line.strip():
                e = MemoryEntry.from_json(json.loads(line))
                incoming.append(MemoryEntry(e.key, e.function_text, e.created_at, EntrySource.IMPORT))
        added, replaced = [], 0
        with self._write_lock:
            for e in incoming:
                existing = self._entries.get(e.key)
                if existing is None:
                    added.append(e)
                    self._entries[e.key] = e
                elif existing.function_text != e.function_text:
                    if not force:
                        raise ConflictingEntry(e.key, existing.function_text, e.function_text)
                    self._entries[e.key] = e
                    replaced += 1
            if replaced:
                self._rewrite()
            else:
                self._append(added)
        return len(added), replaced

    def _rewrite(self):
        if self.path is None:
            return
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        try:
            with tmp.open("w", encoding="utf-8") as fh:
                for e in self._entries.values():
                    fh.write(json.dumps(e.to_json(), ensure_ascii=False) + "\n")
            tmp.replace(self.path)
        except OSError as exc:
            raise StoreUnavailable(f"{self.path}: {exc}") from exc
