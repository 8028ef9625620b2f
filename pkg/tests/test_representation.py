from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from apkscope.errors import DimMismatch, UnknownMode
from apkscope.features import FeatureSubtype
from apkscope.gateway import Gateway, ProviderConfig, stub_embedding
from apkscope.prompts import FunctionDescriptionList
from apkscope.representation import (
    ABLATION_MODES,
    EMPTY_SENTINEL,
    SLOT_NAMES,
    AppRepresentation,
    SlotLayout,
    VectorSet,
    build_representation,
    description_text,
    description_texts,
    read_vectors,
    write_vectors,
    zero_matrix,
    zero_slots,
)

S = FeatureSubtype
DIM = 8


def _gw():
    return Gateway(ProviderConfig(stub_dim=DIM, stub_seed=5))


def test_layout():
    lay = SlotLayout(DIM)
    assert lay.total_dim == 48
    assert lay.span("api_desc") == slice(8, 16)
    assert lay.span("url_sum") == slice(40, 48)
    assert SlotLayout.from_json(lay.to_json()) == lay
    with pytest.raises(ValueError):
        SlotLayout(DIM, tuple(reversed(SLOT_NAMES)))


def test_ablation_table():
    assert ABLATION_MODES == {
        "nopermission": ("perm_desc", "perm_sum"),
        "noapi": ("api_desc", "api_sum"),
        "nourl&uses-feature": ("url_desc", "url_sum"),
        "nodescription": ("perm_desc", "api_desc", "url_desc"),
        "nosummary": ("perm_sum", "api_sum", "url_sum"),
    }


def test_description_text_format():
    lists = [FunctionDescriptionList(S.URL, (("a.com", "ads"),)), FunctionDescriptionList(S.USES_FEATURE)]
    assert description_text(lists) == 'URL: ["a.com": "ads"]\nuses-feature: []'
    assert description_text([FunctionDescriptionList(S.URL), FunctionDescriptionList(S.USES_FEATURE)]) \
        == EMPTY_SENTINEL


def test_description_texts_orders_by_view_and_subtype():
    lists = [FunctionDescriptionList(s, (("n", "f"),)) for s in reversed(list(S))]
    texts = description_texts(lists)
    assert len(texts) == 3
    assert texts[0].startswith("requested permission:")
    assert texts[2].splitlines()[1].startswith("uses-feature:")


def test_build_representation_places_slots():
    lay = SlotLayout(DIM)
    desc = ["d perm", EMPTY_SENTINEL, "d url"]
    summ = ["s perm", "s api", EMPTY_SENTINEL]
    gw = _gw()
    rep = build_representation("a", desc, summ, gw, lay)
    for slot, text in zip(SLOT_NAMES, desc + summ):
        if text == EMPTY_SENTINEL:
            assert not rep.slot(slot).any()
        else:
            np.testing.assert_allclose(rep.slot(slot), stub_embedding(text, 5, DIM))
    # one batched call for the four non-empty texts
    assert gw.usage().call_count == 1


def test_all_empty_app_makes_no_call():
    gw = _gw()
    rep = build_representation("a", [EMPTY_SENTINEL] * 3, [EMPTY_SENTINEL] * 3, gw, SlotLayout(DIM))
    assert not rep.values.any()
    assert gw.calls == []


def test_dim_mismatch():
    with pytest.raises(DimMismatch):
        build_representation("a", ["x"] * 3, ["y"] * 3, _gw(), SlotLayout(DIM + 1))
    with pytest.raises(DimMismatch):
        AppRepresentation("a", SlotLayout(DIM), np.zeros(DIM))


def test_unknown_mode():
    rep = AppRepresentation("a", SlotLayout(DIM), np.ones(6 * DIM))
    with pytest.raises(UnknownMode):
        zero_slots(rep, "nothing")
    with pytest.raises(UnknownMode):
        zero_matrix(np.ones((2, 6 * DIM)), SlotLayout(DIM), "nothing")


_vals = arrays(np.float64, 6 * DIM, elements=st.floats(-5, 5, allow_nan=False))


@settings(max_examples=100, deadline=None)
@given(values=_vals, mode=st.sampled_from(sorted(ABLATION_MODES)))
def test_ablation_zeroes_exactly_listed_slots(values, mode):
    lay = SlotLayout(DIM)
    rep = zero_slots(AppRepresentation("a", lay, values), mode)
    for slot in SLOT_NAMES:
        if slot in ABLATION_MODES[mode]:
            assert not rep.slot(slot).any()
        else:
            np.testing.assert_array_equal(rep.slot(slot), values[lay.span(slot)])
    assert rep.zeroed_slots == frozenset(ABLATION_MODES[mode])
    np.testing.assert_array_equal(zero_matrix(values[None, :], lay, mode)[0], rep.values)


def test_zero_matrix_none_is_identity():
    X = np.ones((3, 6 * DIM))
    assert zero_matrix(X, SlotLayout(DIM), None) is X


def test_vector_file_roundtrip(tmp_path):
    lay = SlotLayout(DIM)
    rng = np.random.default_rng(0)
    mat = rng.standard_normal((3, lay.total_dim)).astype(np.float32).astype(np.float64)
    vs = VectorSet(lay, ["a", "b", "c"], mat, ["malicious", None, "benign"], {"seed": 1})
    p = tmp_path / "v.bin"
    write_vectors(p, vs)
    back = read_vectors(p)
    assert back.apk_ids == vs.apk_ids and back.labels == vs.labels and back.meta == vs.meta
    np.testing.assert_array_equal(back.matrix, mat)
    np.testing.assert_array_equal(back.row("b"), mat[1])
    assert (tmp_path / "v.bin.index.json").exists()
    first = p.read_bytes()
    write_vectors(p, vs)
    assert p.read_bytes() == first


def test_vector_file_bad_magic(tmp_path):
    p = tmp_path / "v.bin"
    p.write_bytes(b"nope")
    with pytest.raises(ValueError):
        read_vectors(p)
