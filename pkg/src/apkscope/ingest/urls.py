from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources

from .models import DexModel

_SCHEME_URL = re.compile(r"(?<![A-Za-z0-9+.-])([A-Za-z][A-Za-z0-9+.-]*)://([^\s/?#\"'<>\\]+)")
_LABEL = r"(?!-)[A-Za-z0-9-]{1,63}(?<!-)"
_BARE_HOST = re.compile(rf"^({_LABEL}(?:\.{_LABEL})+)(?::\d{{1,5}})?(?:/\S*)?$")


@lru_cache(maxsize=None)
def public_suffixes() -> frozenset[str]:
    text = resources.files("apkscope.data").joinpath("public_suffixes.txt").read_text("utf-8")
    return frozenset(
        line.strip().lower() for line in text.splitlines() if line.strip() and not line.startswith("#")
    )


def _host_of(authority: str) -> str:
    host = authority.rsplit("@", 1)[-1]
    if host.startswith("["):  # IPv6 literal
        return host.split("]", 1)[0] + "]"
    return host.split(":", 1)[0].rstrip(".").lower()


def urls_in_string(s: str, suffixes: frozenset[str] | None = None) -> list[str]:
    suffixes = public_suffixes() if suffixes is None else suffixes
    found = [_host_of(m.group(2)) for m in _SCHEME_URL.finditer(s)]
    if found:
        return [h for h in found if h]
    m = _BARE_HOST.match(s.strip())
    if m and m.group(1).rsplit(".", 1)[-1].lower() in suffixes:
        return [m.group(1).lower()]
    return []


def extract_urls(dex: DexModel) -> tuple[str, ...]:
    """Hosts of URL-shaped strings in the string pool, first appearance order."""
    suffixes = public_suffixes()
    hosts: dict[str, None] = {}
    for s in dex.string_pool:
        for h in urls_in_string(s, suffixes):
            hosts.setdefault(h, None)
    return tuple(hosts)
