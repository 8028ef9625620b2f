"""Six-slot embedding fusion (three description slots, three summary slots) and vector files."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DimMismatch, UnknownMode
from .features import VIEW_ORDER, ViewKind
from .prompts import FunctionDescriptionList

EMPTY_SENTINEL = "no features observed"

SLOT_NAMES = ("perm_desc", "api_desc", "url_desc", "perm_sum", "api_sum", "url_sum")
DESC_SLOTS = SLOT_NAMES[:3]
SUM_SLOTS = SLOT_NAMES[3:]
_VIEW_SLOTS = {
    ViewKind.PERMISSION: ("perm_desc", "perm_sum"),
    ViewKind.API: ("api_desc", "api_sum"),
    ViewKind.URL_USES_FEATURE: ("url_desc", "url_sum"),
}

ABLATION_MODES: dict[str, tuple[str, ...]] = {
    "nopermission": _VIEW_SLOTS[ViewKind.PERMISSION],
    "noapi": _VIEW_SLOTS[ViewKind.API],
    "nourl&uses-feature": _VIEW_SLOTS[ViewKind.URL_USES_FEATURE],
    "nodescription": DESC_SLOTS,
    "nosummary": SUM_SLOTS,
}


@dataclass(frozen=True)
class SlotLayout:
    slot_dim: int
    slots: tuple[str, ...] = SLOT_NAMES
    description_granularity: str = "per_view"

    def __post_init__(self):
        if self.slot_dim < 1:
            raise ValueError("slot_dim must be >= 1")
        if self.slots != SLOT_NAMES:
            raise ValueError(f"slot order is fixed: {SLOT_NAMES}")

    @property
    def total_dim(self) -> int:
        return len(self.slots) * self.slot_dim

    def span(self, slot: str) -> slice:
        i = self.slots.index(slot)
        return slice(i * self.slot_dim, (i + 1) * self.slot_dim)

    def to_json(self) -> dict:
        return {
            "slots": list(self.slots),
            "slot_dim": self.slot_dim,
            "total_dim": self.total_dim,
            "description_granularity": self.description_granularity,
        }

    @classmethod
    def from_json(cls, d: dict) -> SlotLayout:
        return cls(int(d["slot_dim"]), tuple(d["slots"]), d.get("description_granularity", "per_view"))


@dataclass(frozen=True)
class AppRepresentation:
    apk_id: str
    layout: SlotLayout
    values: np.ndarray
    zeroed_slots: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.values.shape != (self.layout.total_dim,):
            raise DimMismatch(self.layout.total_dim, self.values.shape[-1] if self.values.ndim else 0)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("representation contains non-finite values")

    def slot(self, name: str) -> np.ndarray:
        return self.values[self.layout.span(name)]


def description_text(lists) -> str:
    """One text per view: each subtype's bracketed list on its own labelled line."""
    lists = list(lists)
    if all(not fl.pairs for fl in lists):
        return EMPTY_SENTINEL
    return "\n".join(f"{fl.subtype.label}: {fl.render()}" for fl in lists)


def description_texts(all_lists: list[FunctionDescriptionList]) -> list[str]:
    by_view = {v: [fl for fl in all_lists if fl.subtype.view is v] for v in VIEW_ORDER}
    out = []
    for v in VIEW_ORDER:
        order = {s: i for i, s in enumerate(v.subtypes)}
        out.append(description_text(sorted(by_view[v], key=lambda fl: order[fl.subtype])))
    return out


def build_representation(apk_id: str, desc_texts, sum_texts, gateway, layout: SlotLayout) -> AppRepresentation:
    texts = list(desc_texts) + list(sum_texts)
    if len(texts) != 6:
        raise ValueError("expected three description texts and three summary texts")
    values = np.zeros(layout.total_dim)
    to_embed = [(slot, t) for slot, t in zip(layout.slots, texts) if t != EMPTY_SENTINEL]
    if to_embed:
        vecs = gateway.embed([t for _, t in to_embed])
        for (slot, _), v in zip(to_embed, vecs):
            if v.shape != (layout.slot_dim,):
                raise DimMismatch(layout.slot_dim, v.shape[0])
            values[layout.span(slot)] = v
    return AppRepresentation(apk_id, layout, values)


def zero_slots(rep: AppRepresentation, mode: str) -> AppRepresentation:
    if mode not in ABLATION_MODES:
        raise UnknownMode(f"unknown ablation mode {mode!r}; expected one of {sorted(ABLATION_MODES)}")
    values = rep.values.copy()
    for slot in ABLATION_MODES[mode]:
        values[rep.layout.span(slot)] = 0.0
    return replace(rep, values=values, zeroed_slots=rep.zeroed_slots | frozenset(ABLATION_MODES[mode]))


def zero_matrix(X: np.ndarray, layout: SlotLayout, mode: str | None) -> np.ndarray:
    """Row-wise ``zero_slots`` on a stacked matrix; ``None`` means no ablation."""
    if mode is None:
        return X
    if mode not in ABLATION_MODES:
        raise UnknownMode(f"unknown ablation mode {mode!r}; expected one of {sorted(ABLATION_MODES)}")
    X = X.copy()
    for slot in ABLATION_MODES[mode]:
        X[:, layout.span(slot)] = 0.0
    return X


# ----------------------------------------------------------------------------
# vector files: magic, u32 header length, JSON header, float32 rows

VECTOR_MAGIC = b"APKVEC1\n"


@dataclass
class VectorSet:
    layout: SlotLayout
    apk_ids: list[str]
    matrix: np.ndarray
    labels: list[str | None]
    meta: dict = field(default_factory=dict)

    def row(self, apk_id: str) -> np.ndarray:
        return self.matrix[self.apk_ids.index(apk_id)]


def index_path(path) -> Path:
    return Path(str(path) + ".index.json")


def write_vectors(path, vs: VectorSet):
    path = Path(path)
    header = {
        "layout": vs.layout.to_json(),
        "rows": len(vs.apk_ids),
        "apk_ids": vs.apk_ids,
        "labels": vs.labels,
        "meta": vs.meta,
    }
    blob = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    mat = np.ascontiguousarray(vs.matrix, dtype="<f4")
    if mat.shape != (len(vs.apk_ids), vs.layout.total_dim):
        raise DimMismatch(vs.layout.total_dim, mat.shape[1] if mat.ndim == 2 else 0)
    with path.open("wb") as fh:
        fh.write(VECTOR_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(mat.tobytes())
    index = {aid: i for i, aid in enumerate(vs.apk_ids)}
    index_path(path).write_text(json.dumps(index, indent=1, sort_keys=True) + "\n", "utf-8")


def read_vectors(path) -> VectorSet:
    data = Path(path).read_bytes()
    if not data.startswith(VECTOR_MAGIC):
        raise ValueError(f"{path}: not a vector file")
    off = len(VECTOR_MAGIC)
    (n,) = struct.unpack_from("<I", data, off)
    header = json.loads(data[off + 4: off + 4 + n])
    layout = SlotLayout.from_json(header["layout"])
    rows = header["rows"]
    mat = np.frombuffer(data, dtype="<f4", offset=off + 4 + n, count=rows * layout.total_dim)
    mat = mat.reshape(rows, layout.total_dim).astype(np.float64)
    return VectorSet(layout, header["apk_ids"], mat, header["labels"], header.get("meta", {}))
