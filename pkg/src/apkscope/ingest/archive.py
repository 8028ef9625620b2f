from __future__ import annotations

import re
import zipfile
from pathlib import Path

from ..errors import MissingDex, MissingManifest, NotZip
from .models import ApkArchive

MANIFEST_ENTRY = "AndroidManifest.xml"
_DEX_RE = re.compile(r"^classes(\d*)\.dex$")


def _dex_order(name: str) -> int:
    digits = _DEX_RE.match(name).group(1)
    # classes.dex is the first dex; classes2.dex the second, and so on
    return int(digits) if digits else 1


def open_archive(path) -> ApkArchive:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic[:2] != b"PK" or not zipfile.is_zipfile(path):
        raise NotZip(path)

    with zipfile.ZipFile(path) as zf:
        infos = zf.infolist()
        names = {i.filename for i in infos}
        if MANIFEST_ENTRY not in names:
            raise MissingManifest(path, MANIFEST_ENTRY)
        dex_names = sorted((n for n in names if _DEX_RE.match(n)), key=_dex_order)
        if not dex_names:
            raise MissingDex(path, "classes.dex")
        return ApkArchive(
            source_path=path,
            entries=tuple((i.filename, i.file_size) for i in infos),
            manifest_bytes=zf.read(MANIFEST_ENTRY),
            dex_blobs=tuple(zf.read(n) for n in dex_names),
        )
