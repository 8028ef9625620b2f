"""Encoders used to assemble fixture APKs from known parts.

These write the formats independently of the package's readers so the
readers can be checked against an external tool's view of the same bytes.
"""

from __future__ import annotations

import hashlib
import io
import struct
import zipfile
import zlib

ANDROID_NS = "http://schemas.android.com/apk/res/android"
NO_INDEX = 0xFFFFFFFF

ATTR_RES_IDS = {"name": 0x01010003, "versionCode": 0x0101021B, "versionName": 0x0101021C}


# ---------------------------------------------------------------- AXML ----


def _pool_utf16(strings):
    data = b""
    offsets = []
    for s in strings:
        offsets.append(len(data))
        units = s.encode("utf-16-le")
        data += struct.pack("<H", len(units) // 2) + units + b"\0\0"
    return offsets, data


def _pool_utf8(strings):
    data = b""
    offsets = []
    for s in strings:
        offsets.append(len(data))
        raw = s.encode("utf-8")
        assert len(s) < 0x80 and len(raw) < 0x80
        data += bytes([len(s), len(raw)]) + raw + b"\0"
    return offsets, data


def string_pool_chunk(strings, utf8=False):
    offsets, data = (_pool_utf8 if utf8 else _pool_utf16)(strings)
    while len(data) % 4:
        data += b"\0"
    header_size = 28
    strings_start = header_size + 4 * len(strings)
    size = strings_start + len(data)
    flags = 0x100 if utf8 else 0
    return (
        struct.pack("<HHIIIIII", 0x0001, header_size, size, len(strings), 0, flags, strings_start, 0)
        + b"".join(struct.pack("<I", o) for o in offsets)
        + data
    )


def encode_axml(package, permissions, features, version_code=1, utf8=False, extra_chunk=False):
    """Binary AndroidManifest.xml with <uses-permission>/<uses-feature> children."""
    # attribute names first so the resource map lines up with them
    strings = ["name", "versionCode", "android", ANDROID_NS, "manifest", "package",
               "uses-permission", "uses-feature", "application"]
    strings += [s for s in dict.fromkeys([package, *permissions, *features]) if s not in strings]
    idx = {s: i for i, s in enumerate(strings)}

    chunks = [string_pool_chunk(strings, utf8=utf8)]
    res_ids = [ATTR_RES_IDS["name"], ATTR_RES_IDS["versionCode"]]
    chunks.append(struct.pack("<HHI", 0x0180, 8, 8 + 4 * len(res_ids)) + b"".join(struct.pack("<I", r) for r in res_ids))
    if extra_chunk:
        # an unknown chunk type must be skipped by its declared size
        chunks.append(struct.pack("<HHI", 0x0777, 8, 16) + b"\xaa" * 8)
    ns_body = struct.pack("<IIII", 1, NO_INDEX, idx["android"], idx[ANDROID_NS])
    chunks.append(struct.pack("<HHI", 0x0100, 16, 24) + ns_body)

    def start(name, attrs):
        body = struct.pack("<IIIIHHHHHH", 1, NO_INDEX, NO_INDEX, idx[name], 20, 20, len(attrs), 0, 0, 0)
        for ns, aname, kind, value in attrs:
            ns_i = idx[ANDROID_NS] if ns else NO_INDEX
            if kind == "str":
                body += struct.pack("<IIIHBBI", ns_i, idx[aname], idx[value], 8, 0, 0x03, idx[value])
            else:
                body += struct.pack("<IIIHBBI", ns_i, idx[aname], NO_INDEX, 8, 0, 0x10, value)
        return struct.pack("<HHI", 0x0102, 16, 8 + len(body)) + body

    def end(name):
        return struct.pack("<HHI", 0x0103, 16, 24) + struct.pack("<IIII", 1, NO_INDEX, NO_INDEX, idx[name])

    chunks.append(start("manifest", [(True, "versionCode", "int", version_code), (False, "package", "str", package)]))
    for p in permissions:
        chunks.append(start("uses-permission", [(True, "name", "str", p)]))
        chunks.append(end("uses-permission"))
    for f in features:
        chunks.append(start("uses-feature", [(True, "name", "str", f)]))
        chunks.append(end("uses-feature"))
    chunks.append(start("application", []))
    chunks.append(end("application"))
    chunks.append(end("manifest"))
    chunks.append(struct.pack("<HHI", 0x0101, 16, 24) + ns_body)

    body = b"".join(chunks)
    return struct.pack("<HHI", 0x0003, 8, 8 + len(body)) + body


def plain_manifest(package, permissions, features):
    lines = [
        '<?xml version="1.0" encoding="utf-8"?>',
        f'<manifest xmlns:android="{ANDROID_NS}" package="{package}" android:versionCode="1">',
    ]
    lines += [f'    <uses-permission android:name="{p}"/>' for p in permissions]
    lines += [f'    <uses-feature android:name="{f}"/>' for f in features]
    lines += ["    <application/>", "</manifest>", ""]
    return "\n".join(lines).encode("utf-8")


# ----------------------------------------------------------------- DEX ----


def _uleb(n):
    out = bytearray()
    while True:
        b = n & 0x7F
        n >>= 7
        if n:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def _mutf8(s):
    out = bytearray()
    for unit in struct.unpack(f"<{len(s.encode('utf-16-le')) // 2}H", s.encode("utf-16-le")):
        if 0 < unit < 0x80:
            out.append(unit)
        elif unit < 0x800:
            out += bytes([0xC0 | unit >> 6, 0x80 | unit & 0x3F])
        else:
            out += bytes([0xE0 | unit >> 12, 0x80 | (unit >> 6) & 0x3F, 0x80 | unit & 0x3F])
    return bytes(out)


def _shorty(desc):
    return "L" if desc.startswith(("L", "[")) else desc


def encode_dex(methods, defined_classes=(), extra_strings=(), version=b"035", raw_strings=()):
    """Minimal dex: string/type/proto/method/class_def tables plus a map list.

    ``methods`` holds (class descriptor, method name, return descriptor) tuples;
    every method takes no parameters. ``raw_strings`` are pre-encoded byte
    strings injected verbatim into the string data (for malformed MUTF-8).
    """
    defined_classes = list(defined_classes)
    supers = ["Ljava/lang/Object;"] if defined_classes else []
    types = sorted(set([m[0] for m in methods] + [m[2] for m in methods] + defined_classes + supers))
    protos_desc = sorted(set(m[2] for m in methods))
    strings = set(types) | {m[1] for m in methods} | {_shorty(r) for r in protos_desc} | set(extra_strings)
    # dex sorts strings by UTF-16 code units
    strings = sorted(strings, key=lambda s: s.encode("utf-16-be"))
    encoded = [(_uleb(len(s.encode("utf-16-le")) // 2), _mutf8(s)) for s in strings]
    for raw in raw_strings:
        strings.append(None)
        encoded.append((_uleb(len(raw)), raw))
    s_idx = {s: i for i, s in enumerate(strings) if s is not None}
    t_idx = {t: i for i, t in enumerate(types)}
    protos = sorted(protos_desc, key=lambda r: t_idx[r])
    p_idx = {r: i for i, r in enumerate(protos)}
    mids = sorted(methods, key=lambda m: (t_idx[m[0]], s_idx[m[1]], p_idx[m[2]]))

    off = 0x70
    string_ids_off = off
    off += 4 * len(strings)
    type_ids_off = off
    off += 4 * len(types)
    proto_ids_off = off
    off += 12 * len(protos)
    method_ids_off = off
    off += 8 * len(mids)
    class_defs_off = off
    off += 32 * len(defined_classes)
    data_off = off

    string_data = bytearray()
    string_offs = []
    for length, payload in encoded:
        string_offs.append(data_off + len(string_data))
        string_data += length + payload + b"\0"
    while (data_off + len(string_data)) % 4:
        string_data += b"\0"
    map_off = data_off + len(string_data)

    map_items = [(0x0000, 1, 0)]
    if strings:
        map_items.append((0x0001, len(strings), string_ids_off))
    if types:
        map_items.append((0x0002, len(types), type_ids_off))
    if protos:
        map_items.append((0x0003, len(protos), proto_ids_off))
    if mids:
        map_items.append((0x0005, len(mids), method_ids_off))
    if defined_classes:
        map_items.append((0x0006, len(defined_classes), class_defs_off))
    if strings:
        map_items.append((0x2002, len(strings), data_off))
    map_items.append((0x1000, 1, map_off))
    map_list = struct.pack("<I", len(map_items)) + b"".join(struct.pack("<HHII", t, 0, n, o) for t, n, o in map_items)
    file_size = map_off + len(map_list)
    data_size = file_size - data_off

    body = bytearray()
    body += b"".join(struct.pack("<I", o) for o in string_offs)
    body += b"".join(struct.pack("<I", s_idx[t]) for t in types)
    body += b"".join(struct.pack("<III", s_idx[_shorty(r)], t_idx[r], 0) for r in protos)
    body += b"".join(struct.pack("<HHI", t_idx[c], p_idx[r], s_idx[n]) for c, n, r in mids)
    for c in sorted(defined_classes, key=lambda c: t_idx[c]):
        body += struct.pack("<IIIIIIII", t_idx[c], 0x1, t_idx["Ljava/lang/Object;"], 0, NO_INDEX, 0, 0, 0)
    body += string_data + map_list

    sections = [
        (len(strings), string_ids_off if strings else 0),
        (len(types), type_ids_off if types else 0),
        (len(protos), proto_ids_off if protos else 0),
        (0, 0),
        (len(mids), method_ids_off if mids else 0),
        (len(defined_classes), class_defs_off if defined_classes else 0),
        (data_size, data_off),
    ]
    header = bytearray(b"dex\n" + version + b"\0")
    header += b"\0" * 24  # checksum + signature, filled below
    header += struct.pack("<IIIIII", file_size, 0x70, 0x12345678, 0, 0, map_off)
    for n, o in sections:
        header += struct.pack("<II", n, o)
    assert len(header) == 0x70
    blob = bytearray(header + body)
    assert len(blob) == file_size
    blob[12:32] = hashlib.sha1(blob[32:]).digest()
    blob[8:12] = struct.pack("<I", zlib.adler32(bytes(blob[12:])) & 0xFFFFFFFF)
    return bytes(blob)


# ----------------------------------------------------------------- APK ----


def build_apk(entries: dict[str, bytes]) -> bytes:
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
        for name, data in entries.items():
            info = zipfile.ZipInfo(name, date_time=(2020, 1, 1, 0, 0, 0))
            zf.writestr(info, data)
    return buf.getvalue()
