"""APK container, binary manifest and dex symbol-table ingestion."""

from __future__ import annotations

from .archive import open_archive
from .dex import parse_dex
from .manifest import parse_manifest
from .models import ApkArchive, DexModel, ManifestModel, MethodRef
from .urls import extract_urls

__all__ = [
    "ApkArchive",
    "DexModel",
    "ManifestModel",
    "MethodRef",
    "extract_urls",
    "load_apk",
    "open_archive",
    "parse_dex",
    "parse_manifest",
]


def load_apk(path, strict: bool = False) -> tuple[ManifestModel, DexModel]:
    archive = open_archive(path)
    manifest = parse_manifest(archive.manifest_bytes)
    dex = DexModel.merge([parse_dex(blob, strict=strict) for blob in archive.dex_blobs])
    return manifest, dex
