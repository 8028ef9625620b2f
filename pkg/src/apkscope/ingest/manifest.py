from __future__ import annotations

import struct
import xml.etree.ElementTree as ET

from ..errors import MalformedAxml, MalformedXml
from .axml import ANDROID_NS, AXML_MAGIC, parse_axml
from .models import ManifestModel, is_valid_package, ordered_unique

_ANDROID_NAME = f"{{{ANDROID_NS}}}name"


def parse_manifest(data: bytes) -> ManifestModel:
    """Parse AndroidManifest.xml, binary or (for reviewable fixtures) plain text."""
    if len(data) >= 4 and struct.unpack_from("<I", data)[0] == AXML_MAGIC:
        return _from_axml(data)
    text_head = data.lstrip(b"\xef\xbb\xbf \t\r\n")[:1]
    if text_head == b"<":
        return _from_text(data)
    raise MalformedAxml("neither binary XML nor plain XML", 0)


def _build(package: str, perms, feats) -> ManifestModel:
    return ManifestModel(
        package_name=package,
        requested_permissions=ordered_unique(perms),
        uses_features=ordered_unique(feats),
        package_malformed=not is_valid_package(package),
    )


def _from_axml(data: bytes) -> ManifestModel:
    root = parse_axml(data)
    if root.name != "manifest":
        raise MalformedAxml(f"root element is <{root.name}>, expected <manifest>", 0)
    perms = []
    feats = []
    for el in root.iter():
        # uses-permission-sdk-23 grants the same permission on newer platforms
        if el.name in ("uses-permission", "uses-permission-sdk-23"):
            perms.append(el.attributes.get("name", "").strip())
        elif el.name == "uses-feature":
            feats.append(el.attributes.get("name", "").strip())
    return _build(root.attributes.get("package", ""), perms, feats)


def _from_text(data: bytes) -> ManifestModel:
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise MalformedXml(f"plain-text manifest: {exc}") from exc
    if root.tag != "manifest":
        raise MalformedXml(f"root element is <{root.tag}>, expected <manifest>")

    def name_of(el):
        return (el.get(_ANDROID_NAME) or el.get("name") or "").strip()

    perms = [name_of(el) for el in root.iter() if el.tag in ("uses-permission", "uses-permission-sdk-23")]
    feats = [name_of(el) for el in root.iter("uses-feature")]
    return _build(root.get("package", ""), perms, feats)
