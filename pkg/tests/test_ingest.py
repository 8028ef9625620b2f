from __future__ import annotations

import struct
import zipfile

import pytest
from builders import build_apk, encode_axml, encode_dex, plain_manifest
from conftest import FIXTURES, golden
from hypothesis import given, settings
from hypothesis import strategies as st

from apkscope.errors import (
    BadDexMagic,
    ChecksumMismatch,
    IndexOutOfRange,
    IngestError,
    MalformedAxml,
    MalformedXml,
    MissingDex,
    MissingManifest,
    NotZip,
    TruncatedSection,
)
from apkscope.ingest import DexModel, extract_urls, load_apk, open_archive, parse_dex, parse_manifest
from apkscope.ingest.dex import UNDECODABLE, decode_mutf8
from apkscope.ingest.urls import urls_in_string

# --- goldens (produced offline by an independent parser) ---------------------


@pytest.mark.parametrize("name", ["tiny_manifest.axml", "wedding_manifest.axml"])
def test_manifest_matches_golden(fixtures_dir, name):
    got = parse_manifest((fixtures_dir / name).read_bytes())
    want = golden(name)
    assert got.package_name == want["package_name"]
    assert list(got.requested_permissions) == want["requested_permissions"]
    assert list(got.uses_features) == want["uses_features"]
    assert not got.package_malformed


@pytest.mark.parametrize("stem", ["tiny_manifest", "wedding_manifest"])
def test_plain_text_manifest_equals_binary(fixtures_dir, stem):
    assert parse_manifest((fixtures_dir / f"{stem}.xml").read_bytes()) == parse_manifest(
        (fixtures_dir / f"{stem}.axml").read_bytes()
    )


@pytest.mark.parametrize(
    "name", ["tiny_classes.dex", "wedding_classes.dex", "wedding_classes2.dex", "empty_classes.dex"]
)
def test_dex_matches_golden(fixtures_dir, name):
    got = parse_dex((fixtures_dir / name).read_bytes(), strict=True)
    want = golden(name)
    assert list(got.string_pool) == want["string_pool"]
    assert [m.canonical for m in got.method_refs] == want["method_refs"]
    assert list(got.class_names) == want["class_names"]
    assert got.undecodable_strings == 0


@pytest.mark.parametrize("name", ["tiny.apk", "wedding.apk"])
def test_archive_entries_match_golden(fixtures_dir, name):
    arch = open_archive(fixtures_dir / name)
    assert [list(e) for e in arch.entries] == golden(f"{name}.entries")


def test_multidex_order_and_merge(fixtures_dir):
    arch = open_archive(fixtures_dir / "wedding.apk")
    assert len(arch.dex_blobs) == 2
    _, dex = load_apk(fixtures_dir / "wedding.apk")
    first = [m for m in golden("wedding_classes.dex")["method_refs"]]
    second = [m for m in golden("wedding_classes2.dex")["method_refs"]]
    assert [m.canonical for m in dex.method_refs] == list(dict.fromkeys(first + second))


def test_urls_from_fixture(fixtures_dir):
    _, dex = load_apk(fixtures_dir / "tiny.apk")
    assert set(extract_urls(dex)) == {"graph.facebook.com", "360.cn"}
    _, dex = load_apk(fixtures_dir / "wedding.apk")
    assert extract_urls(dex) == ("graph.facebook.com", "ads.example.com", "m.facebook.com")


# --- error variants -----------------------------------------------------------


def test_not_zip(fixtures_dir):
    with pytest.raises(NotZip):
        open_archive(fixtures_dir / "not_an_apk.txt")


def test_missing_manifest(fixtures_dir):
    with pytest.raises(MissingManifest):
        open_archive(fixtures_dir / "no_manifest.apk")


def test_missing_dex(fixtures_dir):
    with pytest.raises(MissingDex):
        open_archive(fixtures_dir / "no_dex.apk")


def test_truncated_axml_reports_offset(fixtures_dir):
    data = (fixtures_dir / "tiny_manifest.axml").read_bytes()
    with pytest.raises(MalformedAxml) as ei:
        parse_manifest(data[: len(data) // 2])
    assert ei.value.offset >= 0


def test_garbage_manifest():
    with pytest.raises(MalformedAxml):
        parse_manifest(b"\x00\x01\x02\x03garbage")
    with pytest.raises(MalformedXml):
        parse_manifest(b"<manifest><unclosed></manifest>")


def test_bad_dex_magic(fixtures_dir):
    data = bytearray((fixtures_dir / "tiny_classes.dex").read_bytes())
    data[4:7] = b"099"
    with pytest.raises(BadDexMagic):
        parse_dex(bytes(data))
    with pytest.raises(BadDexMagic):
        parse_dex(b"PK\x03\x04")


def test_truncated_dex(fixtures_dir):
    data = (fixtures_dir / "tiny_classes.dex").read_bytes()
    with pytest.raises(TruncatedSection):
        parse_dex(data[:60])
    with pytest.raises(TruncatedSection):
        parse_dex(data[:-20])


def test_dex_index_out_of_range(fixtures_dir):
    data = bytearray((fixtures_dir / "tiny_classes.dex").read_bytes())
    method_ids_off = struct.unpack_from("<I", data, 0x5C)[0]
    struct.pack_into("<I", data, method_ids_off + 4, 0xFFFF)  # name_idx of the first method
    with pytest.raises(IndexOutOfRange) as ei:
        parse_dex(bytes(data))
    assert ei.value.table == "string_ids"


def test_checksum_only_checked_when_strict(fixtures_dir):
    data = bytearray((fixtures_dir / "tiny_classes.dex").read_bytes())
    data[8] ^= 0xFF
    parse_dex(bytes(data))
    with pytest.raises(ChecksumMismatch):
        parse_dex(bytes(data), strict=True)


def test_undecodable_string_is_counted():
    blob = encode_dex([("La;", "m", "V")], raw_strings=[b"\xff\xfe"])
    dex = parse_dex(blob)
    assert dex.undecodable_strings == 1
    assert dex.string_pool[-1] == UNDECODABLE


def test_mutf8_null_and_surrogates():
    assert decode_mutf8(b"a\xc0\x80b") == "a\x00b"
    # U+1F48D as a CESU-style surrogate pair
    assert decode_mutf8(b"\xed\xa0\xbd\xed\xb2\x8d") == "\U0001F48D"


def test_duplicate_permission_deduplicated(fixture_meta, fixtures_dir):
    declared = fixture_meta["wedding.apk"]["permissions"]
    got = parse_manifest((fixtures_dir / "wedding_manifest.axml").read_bytes())
    assert len(declared) == len(got.requested_permissions) + 1


def test_malformed_package_flagged():
    m = parse_manifest(plain_manifest("not a package!", ["android.permission.INTERNET"], []))
    assert m.package_malformed


def test_url_normalization():
    assert urls_in_string("see HTTPS://User:pw@Example.COM:8443/x?y") == ["example.com"]
    assert urls_in_string("java.io.File") == []
    assert urls_in_string("360.cn") == ["360.cn"]
    assert urls_in_string("hello world") == []


# --- properties ---------------------------------------------------------------

_ident = st.from_regex(r"[a-z][a-z0-9_]{0,8}", fullmatch=True)
_perm = _ident.map(lambda s: f"android.permission.{s.upper()}")
_feat = _ident.map(lambda s: f"android.hardware.{s}")


@settings(max_examples=60, deadline=None)
@given(
    pkg=st.lists(_ident, min_size=2, max_size=4).map(".".join),
    perms=st.lists(_perm, max_size=8),
    feats=st.lists(_feat, max_size=5),
    utf8=st.booleans(),
    extra=st.booleans(),
)
def test_axml_roundtrip(pkg, perms, feats, utf8, extra):
    m = parse_manifest(encode_axml(pkg, perms, feats, utf8=utf8, extra_chunk=extra))
    assert m.package_name == pkg
    assert list(m.requested_permissions) == list(dict.fromkeys(perms))
    assert list(m.uses_features) == list(dict.fromkeys(feats))
    assert m == parse_manifest(plain_manifest(pkg, perms, feats))


_cls = st.lists(_ident, min_size=1, max_size=3).map(lambda p: "L" + "/".join(p) + ";")


@settings(max_examples=60, deadline=None)
@given(
    methods=st.lists(st.tuples(_cls, _ident, st.sampled_from(["V", "Z", "Ljava/lang/String;"])),
                     max_size=12, unique=True),
    extra=st.lists(st.text(min_size=1, max_size=12), max_size=5),
    version=st.sampled_from([b"035", b"037", b"038", b"039", b"040"]),
)
def test_dex_roundtrip(methods, extra, version):
    dex = parse_dex(encode_dex(methods, extra_strings=extra, version=version), strict=True)
    assert sorted(m.canonical for m in dex.method_refs) == sorted(f"{c[:-1]}.{n}" for c, n, _ in methods)
    for s in extra:
        assert s in dex.string_pool
    assert dex.undecodable_strings == 0


@settings(max_examples=150, deadline=None)
@given(data=st.data())
def test_corrupted_dex_raises_only_ingest_errors(data):
    blob = bytearray((FIXTURES / "wedding_classes2.dex").read_bytes())
    for _ in range(data.draw(st.integers(1, 6))):
        i = data.draw(st.integers(0, len(blob) - 1))
        blob[i] = data.draw(st.integers(0, 255))
    cut = data.draw(st.integers(0, len(blob)))
    try:
        parse_dex(bytes(blob[:cut]) if data.draw(st.booleans()) else bytes(blob))
    except IngestError:
        pass


@settings(max_examples=150, deadline=None)
@given(data=st.data())
def test_corrupted_axml_raises_only_ingest_errors(data):
    blob = bytearray((FIXTURES / "wedding_manifest.axml").read_bytes())
    for _ in range(data.draw(st.integers(1, 6))):
        i = data.draw(st.integers(4, len(blob) - 1))
        blob[i] = data.draw(st.integers(0, 255))
    try:
        parse_manifest(bytes(blob[: data.draw(st.integers(0, len(blob)))]))
    except IngestError:
        pass


def test_dex_merge_is_ordered_union():
    a = parse_dex(encode_dex([("La;", "x", "V"), ("Lb;", "y", "V")]))
    b = parse_dex(encode_dex([("Lb;", "y", "V"), ("Lc;", "z", "V")]))
    merged = DexModel.merge([a, b])
    assert [m.canonical for m in merged.method_refs] == ["La.x", "Lb.y", "Lc.z"]


def test_apk_with_extra_entries(tmp_path, fixtures_dir):
    p = tmp_path / "x.apk"
    p.write_bytes(build_apk({
        "AndroidManifest.xml": (fixtures_dir / "tiny_manifest.axml").read_bytes(),
        "classes.dex": (fixtures_dir / "tiny_classes.dex").read_bytes(),
        "assets/data.bin": b"\0" * 10,
    }))
    assert zipfile.is_zipfile(p)
    m, d = load_apk(p)
    assert m.package_name == "com.example.tiny"
    assert len(d.method_refs) == 3
