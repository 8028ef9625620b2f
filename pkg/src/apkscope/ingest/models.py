from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

_PACKAGE_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z_][A-Za-z0-9_]*)+$")


def is_valid_package(name: str) -> bool:
    return bool(_PACKAGE_RE.match(name))


@dataclass(frozen=True)
class ApkArchive:
    source_path: Path
    entries: tuple[tuple[str, int], ...]
    manifest_bytes: bytes
    dex_blobs: tuple[bytes, ...]


@dataclass(frozen=True)
class ManifestModel:
    package_name: str
    requested_permissions: tuple[str, ...] = ()
    uses_features: tuple[str, ...] = ()
    package_malformed: bool = False

    def to_json(self) -> dict:
        return {
            "package_name": self.package_name,
            "package_malformed": self.package_malformed,
            "requested_permissions": list(self.requested_permissions),
            "uses_features": list(self.uses_features),
        }


@dataclass(frozen=True)
class MethodRef:
    class_descriptor: str
    method_name: str

    @property
    def canonical(self) -> str:
        # Lpkg/Class; + name -> Lpkg/Class.name
        return f"{self.class_descriptor.removesuffix(';')}.{self.method_name}"


@dataclass(frozen=True)
class DexModel:
    string_pool: tuple[str, ...] = ()
    method_refs: tuple[MethodRef, ...] = ()
    class_names: tuple[str, ...] = ()
    checksum: int = 0
    undecodable_strings: int = 0

    def to_json(self) -> dict:
        return {
            "string_pool": list(self.string_pool),
            "method_refs": [m.canonical for m in self.method_refs],
            "class_names": list(self.class_names),
            "undecodable_strings": self.undecodable_strings,
        }

    @classmethod
    def merge(cls, models: list[DexModel]) -> DexModel:
        """Union several classesN.dex models, keeping first-appearance order."""
        if len(models) == 1:
            return models[0]
        strings = dict.fromkeys(s for m in models for s in m.string_pool)
        refs = dict.fromkeys(r for m in models for r in m.method_refs)
        classes = dict.fromkeys(c for m in models for c in m.class_names)
        return cls(
            string_pool=tuple(strings),
            method_refs=tuple(refs),
            class_names=tuple(classes),
            checksum=models[0].checksum if models else 0,
            undecodable_strings=sum(m.undecodable_strings for m in models),
        )


def ordered_unique(items) -> tuple[str, ...]:
    return tuple(dict.fromkeys(i for i in items if i))
