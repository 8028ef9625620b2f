"""DEX reader for the symbol tables: strings, types, protos, methods, class defs.

Format reference: https://source.android.com/docs/core/runtime/dex-format
"""

from __future__ import annotations

import struct
import zlib

from ..errors import BadDexMagic, ChecksumMismatch, IndexOutOfRange, TruncatedSection
from .models import DexModel, MethodRef

HEADER_SIZE = 0x70
SUPPORTED_VERSIONS = (b"035", b"036", b"037", b"038", b"039", b"040")
UNDECODABLE = "�<undecodable>"

_HEADER = struct.Struct("<8sI20sIIIIII" + "II" * 7)


def _uleb128(data: bytes, off: int) -> tuple[int, int]:
    result = shift = 0
    for _ in range(5):
        if off >= len(data):
            raise TruncatedSection("string_data", off + 1, len(data))
        b = data[off]
        off += 1
        result |= (b & 0x7F) << shift
        if not b & 0x80:
            return result, off
        shift += 7
    raise TruncatedSection("string_data", 5, off)


def decode_mutf8(raw: bytes) -> str:
    """Decode modified UTF-8 (CESU-style surrogates, 0xC0 0x80 for NUL)."""
    units = []
    i, n = 0, len(raw)
    while i < n:
        b = raw[i]
        if b < 0x80:
            units.append(b)
            i += 1
        elif b & 0xE0 == 0xC0:
            if i + 1 >= n or raw[i + 1] & 0xC0 != 0x80:
                raise ValueError("bad 2-byte sequence")
            units.append(((b & 0x1F) << 6) | (raw[i + 1] & 0x3F))
            i += 2
        elif b & 0xF0 == 0xE0:
            if i + 2 >= n or raw[i + 1] & 0xC0 != 0x80 or raw[i + 2] & 0xC0 != 0x80:
                raise ValueError("bad 3-byte sequence")
            units.append(((b & 0x0F) << 12) | ((raw[i + 1] & 0x3F) << 6) | (raw[i + 2] & 0x3F))
            i += 3
        else:
            raise ValueError(f"invalid lead byte {b:#x}")
    # pair up surrogates; lone surrogates are rejected by the strict decode
    return struct.pack(f"<{len(units)}H", *units).decode("utf-16-le")


class _DexReader:
    def __init__(self, data: bytes):
        self.data = data

    def section(self, name: str, off: int, count: int, item: int) -> memoryview:
        size = count * item
        if count and (off < 0 or off + size > len(self.data)):
            raise TruncatedSection(name, size, max(0, len(self.data) - off))
        return memoryview(self.data)[off:off + size]


def parse_dex(data: bytes, strict: bool = False) -> DexModel:
    if len(data) < 8:
        raise BadDexMagic(bytes(data[:8]))
    magic = bytes(data[:8])
    if magic[:4] != b"dex\n" or magic[7:8] != b"\0" or magic[4:7] not in SUPPORTED_VERSIONS:
        raise BadDexMagic(magic)
    if len(data) < HEADER_SIZE:
        raise TruncatedSection("header", HEADER_SIZE, len(data))

    (
        _magic, checksum, _signature, file_size, _header_size, _endian,
        _link_size, _link_off, _map_off,
        string_ids_size, string_ids_off,
        type_ids_size, type_ids_off,
        proto_ids_size, proto_ids_off,
        _field_ids_size, _field_ids_off,
        method_ids_size, method_ids_off,
        class_defs_size, class_defs_off,
        _data_size, _data_off,
    ) = _HEADER.unpack_from(data, 0)

    if file_size > len(data):
        raise TruncatedSection("file", file_size, len(data))
    if strict:
        actual = zlib.adler32(data[12:file_size]) & 0xFFFFFFFF
        if actual != checksum:
            raise ChecksumMismatch(f"adler32 {actual:#010x} != header {checksum:#010x}")

    r = _DexReader(data)

    # strings
    string_offs = struct.unpack_from(
        f"<{string_ids_size}I", r.section("string_ids", string_ids_off, string_ids_size, 4)
    )
    strings = []
    undecodable = 0
    for off in string_offs:
        if off >= len(data):
            raise TruncatedSection("string_data", off + 1, len(data))
        _utf16_len, start = _uleb128(data, off)
        end = data.find(b"\0", start)
        if end < 0:
            raise TruncatedSection("string_data", start + 1, len(data) - start)
        try:
            strings.append(decode_mutf8(data[start:end]))
        except (ValueError, UnicodeDecodeError):
            strings.append(UNDECODABLE)
            undecodable += 1

    def string_at(idx: int) -> str:
        if idx >= len(strings):
            raise IndexOutOfRange("string_ids", idx, len(strings))
        return strings[idx]

    # types
    type_desc = [
        string_at(i)
        for i in struct.unpack_from(f"<{type_ids_size}I", r.section("type_ids", type_ids_off, type_ids_size, 4))
    ]

    def type_at(idx: int) -> str:
        if idx >= len(type_desc):
            raise IndexOutOfRange("type_ids", idx, len(type_desc))
        return type_desc[idx]

    # protos are only range-checked; their shapes do not feed any feature
    protos = r.section("proto_ids", proto_ids_off, proto_ids_size, 12)
    for i in range(proto_ids_size):
        shorty, ret, _params = struct.unpack_from("<III", protos, i * 12)
        string_at(shorty)
        type_at(ret)

    methods = r.section("method_ids", method_ids_off, method_ids_size, 8)
    refs = []
    for i in range(method_ids_size):
        class_idx, proto_idx, name_idx = struct.unpack_from("<HHI", methods, i * 8)
        if proto_idx >= proto_ids_size:
            raise IndexOutOfRange("proto_ids", proto_idx, proto_ids_size)
        refs.append(MethodRef(class_descriptor=type_at(class_idx), method_name=string_at(name_idx)))

    cdefs = r.section("class_defs", class_defs_off, class_defs_size, 32)
    class_names = [type_at(struct.unpack_from("<I", cdefs, i * 32)[0]) for i in range(class_defs_size)]

    return DexModel(
        string_pool=tuple(strings),
        method_refs=tuple(refs),
        class_names=tuple(class_names),
        checksum=checksum,
        undecodable_strings=undecodable,
    )
