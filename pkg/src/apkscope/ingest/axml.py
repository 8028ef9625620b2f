"""Android binary XML reader, restricted to the chunk types manifests use.

Layout reference: frameworks/base/libs/androidfw/include/androidfw/ResourceTypes.h
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from ..errors import MalformedAxml

RES_NULL_TYPE = 0x0000
RES_STRING_POOL_TYPE = 0x0001
RES_XML_TYPE = 0x0003
RES_XML_START_NAMESPACE_TYPE = 0x0100
RES_XML_END_NAMESPACE_TYPE = 0x0101
RES_XML_START_ELEMENT_TYPE = 0x0102
RES_XML_END_ELEMENT_TYPE = 0x0103
RES_XML_CDATA_TYPE = 0x0104
RES_XML_RESOURCE_MAP_TYPE = 0x0180

AXML_MAGIC = 0x00080003
UTF8_FLAG = 1 << 8
NO_INDEX = 0xFFFFFFFF

TYPE_STRING = 0x03
TYPE_INT_DEC = 0x10
TYPE_INT_HEX = 0x11
TYPE_INT_BOOLEAN = 0x12

ANDROID_NS = "http://schemas.android.com/apk/res/android"

# android:name and friends, for manifests whose attribute name strings are stripped
_ATTR_BY_RESOURCE_ID = {
    0x01010001: "label",
    0x01010002: "icon",
    0x01010003: "name",
    0x0101021B: "versionCode",
    0x0101021C: "versionName",
    0x0101020C: "minSdkVersion",
    0x01010270: "targetSdkVersion",
    0x0101028E: "required",
}


@dataclass
class XmlElement:
    name: str
    namespace: str | None
    attributes: dict[str, str] = field(default_factory=dict)
    children: list[XmlElement] = field(default_factory=list)

    def iter(self, tag: str | None = None):
        if tag is None or self.name == tag:
            yield self
        for child in self.children:
            yield from child.iter(tag)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data

    def need(self, offset: int, size: int, what: str):
        if offset < 0 or offset + size > len(self.data):
            raise MalformedAxml(f"{what}: needs {size} bytes, buffer ends at {len(self.data)}", offset)

    def u8(self, off: int, what: str = "u8") -> int:
        self.need(off, 1, what)
        return self.data[off]

    def u16(self, off: int, what: str = "u16") -> int:
        self.need(off, 2, what)
        return struct.unpack_from("<H", self.data, off)[0]

    def u32(self, off: int, what: str = "u32") -> int:
        self.need(off, 4, what)
        return struct.unpack_from("<I", self.data, off)[0]


def _read_string_pool(r: _Reader, start: int, header_size: int, chunk_size: int) -> list[str]:
    end = start + chunk_size
    r.need(start, chunk_size, "string pool chunk")
    count = r.u32(start + 8)
    flags = r.u32(start + 16)
    strings_start = r.u32(start + 20)
    utf8 = bool(flags & UTF8_FLAG)
    offsets_at = start + header_size
    if offsets_at + 4 * count > end:
        raise MalformedAxml(f"string pool offset table overruns chunk ({count} entries)", offsets_at)
    base = start + strings_start
    strings = []
    for i in range(count):
        off = base + r.u32(offsets_at + 4 * i)
        if off >= end:
            raise MalformedAxml(f"string #{i} offset points past pool", off)
        strings.append(_read_utf8(r, off, end) if utf8 else _read_utf16(r, off, end))
    return strings


def _read_utf8(r: _Reader, off: int, end: int) -> str:
    # char count then byte count, each 1 or 2 bytes (high bit = long form)
    n = r.u8(off, "string length")
    off += 2 if n & 0x80 else 1
    nbytes = r.u8(off, "string length")
    if nbytes & 0x80:
        nbytes = ((nbytes & 0x7F) << 8) | r.u8(off + 1, "string length")
        off += 2
    else:
        off += 1
    if off + nbytes > end:
        raise MalformedAxml("utf-8 string runs past pool", off)
    return r.data[off:off + nbytes].decode("utf-8", errors="replace")


def _read_utf16(r: _Reader, off: int, end: int) -> str:
    n = r.u16(off, "string length")
    off += 2
    if n & 0x8000:
        n = ((n & 0x7FFF) << 16) | r.u16(off, "string length")
        off += 2
    if off + 2 * n > end:
        raise MalformedAxml("utf-16 string runs past pool", off)
    return r.data[off:off + 2 * n].decode("utf-16-le", errors="replace")


def _typed_value_to_str(data_type: int, data: int, strings: list[str]) -> str:
    if data_type == TYPE_STRING:
        return strings[data] if data < len(strings) else ""
    if data_type == TYPE_INT_BOOLEAN:
        return "true" if data else "false"
    if data_type == TYPE_INT_HEX:
        return f"0x{data:08x}"
    if data_type == TYPE_INT_DEC:
        return str(struct.unpack("<i", struct.pack("<I", data))[0])
    return str(data)


def parse_axml(data: bytes) -> XmlElement:
    """Parse a binary XML document and return its root element."""
    r = _Reader(data)
    if r.u32(0, "document header") != AXML_MAGIC:
        raise MalformedAxml("not an AXML document", 0)
    doc_size = r.u32(4, "document header")
    end = min(doc_size, len(data))

    strings: list[str] = []
    resource_ids: list[int] = []
    namespaces: dict[str, str] = {}
    root: XmlElement | None = None
    stack: list[XmlElement] = []

    off = 8
    while off + 8 <= end:
        ctype = r.u16(off)
        hsize = r.u16(off + 2)
        csize = r.u32(off + 4)
        if csize < 8 or hsize < 8 or hsize > csize:
            raise MalformedAxml(f"bad chunk header (type {ctype:#x}, size {csize})", off)
        if off + csize > len(data):
            raise MalformedAxml(f"chunk of {csize} bytes underflows buffer", off)

        if ctype == RES_STRING_POOL_TYPE:
            strings = _read_string_pool(r, off, hsize, csize)
        elif ctype == RES_XML_RESOURCE_MAP_TYPE:
            resource_ids = [r.u32(off + hsize + 4 * i) for i in range((csize - hsize) // 4)]
        elif ctype == RES_XML_START_NAMESPACE_TYPE:
            prefix_i, uri_i = r.u32(off + 16), r.u32(off + 20)
            namespaces[_s(strings, uri_i, off)] = _s(strings, prefix_i, off)
        elif ctype == RES_XML_START_ELEMENT_TYPE:
            elem = _read_element(r, off, hsize, strings, resource_ids)
            if stack:
                stack[-1].children.append(elem)
            elif root is None:
                root = elem
            stack.append(elem)
        elif ctype == RES_XML_END_ELEMENT_TYPE:
            if stack:
                stack.pop()
        # END_NAMESPACE, CDATA and anything unknown are skipped by declared size
        off += csize

    if root is None:
        raise MalformedAxml("document has no root element", off)
    return root


def _s(strings: list[str], idx: int, off: int) -> str:
    if idx == NO_INDEX:
        return ""
    if idx >= len(strings):
        raise MalformedAxml(f"string index {idx} outside pool of {len(strings)}", off)
    return strings[idx]


def _read_element(r: _Reader, off: int, hsize: int, strings, resource_ids) -> XmlElement:
    ext = off + hsize
    ns_i = r.u32(ext)
    name_i = r.u32(ext + 4)
    attr_start = r.u16(ext + 8)
    attr_size = r.u16(ext + 10)
    attr_count = r.u16(ext + 12)
    elem = XmlElement(name=_s(strings, name_i, off), namespace=_s(strings, ns_i, off) or None)
    for a in range(attr_count):
        at = ext + attr_start + a * attr_size
        a_name_i = r.u32(at + 4, "attribute")
        raw_i = r.u32(at + 8, "attribute")
        data_type = r.u8(at + 15, "attribute")
        data = r.u32(at + 16, "attribute")
        name = _s(strings, a_name_i, at)
        if not name and a_name_i < len(resource_ids):
            name = _ATTR_BY_RESOURCE_ID.get(resource_ids[a_name_i], "")
        if raw_i != NO_INDEX:
            value = _s(strings, raw_i, at)
        else:
            value = _typed_value_to_str(data_type, data, strings)
        if name:
            elem.attributes[name] = value
    return elem
