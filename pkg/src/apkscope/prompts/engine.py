from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path

from ..errors import (
    AltReplyParseError,
    EmptyReply,
    MissingSummary,
    NotEnoughShots,
    SubtypeMismatch,
    UnresolvedPlaceholder,
)
from ..features import VIEW_ORDER, FeatureRecord, FeatureSubtype, ViewBundle, ViewKind

DEFAULT_K = 3

PLACEHOLDER_RE = re.compile(r"\{([A-Za-z][^{}\n\"]*)\}")


class Purpose(str, Enum):
    FUNCTION_DESCRIPTION = "function_description"
    VIEW_SUMMARY = "view_summary"
    DIAGNOSTIC_REPORT = "diagnostic_report"
    ALT_NO_PHASE = "alt_no_phase"
    ALT_NO_VIEW_DESCRIPTION = "alt_no_view_description"
    ALT_NO_VIEW_SUMMARY = "alt_no_view_summary"


@dataclass(frozen=True)
class RenderedPrompt:
    purpose: Purpose
    text: str
    substitutions: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class ExampleShot:
    feature_type: str
    feature_name: str
    function_text: str

    def __post_init__(self):
        if not (self.feature_type and self.feature_name and self.function_text):
            raise ValueError("example shot fields must be non-empty")
        if "\n" in self.function_text:
            raise ValueError("example function text must be a single line")


@dataclass(frozen=True)
class ViewSummary:
    view: ViewKind
    text: str


# ----------------------------------------------------------------------------
# template assets


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    text = resources.files("apkscope.prompts.templates").joinpath(f"{name}.txt").read_text("utf-8")
    return text.rstrip("\n")


def placeholders(template: str) -> list[str]:
    return list(dict.fromkeys(PLACEHOLDER_RE.findall(template)))


def fill(template: str, values: dict[str, str]) -> str:
    """Substitute every ``{Name}`` in one pass; injected text is never re-expanded."""
    missing = [p for p in placeholders(template) if p not in values]
    if missing:
        raise UnresolvedPlaceholder(f"no value for {missing}")
    return PLACEHOLDER_RE.sub(lambda m: values[m.group(1)], template)


def _render(purpose: Purpose, template: str, values: dict[str, str]) -> RenderedPrompt:
    used = {p: values[p] for p in placeholders(template)} if values else {}
    return RenderedPrompt(purpose, fill(template, values), used)


# ----------------------------------------------------------------------------
# function description lists


@dataclass(frozen=True)
class FunctionDescriptionList:
    subtype: FeatureSubtype
    pairs: tuple[tuple[str, str], ...] = ()

    def render(self) -> str:
        inner = ", ".join(
            f"{json.dumps(n, ensure_ascii=False)}: {json.dumps(f, ensure_ascii=False)}" for n, f in self.pairs
        )
        return f"[{inner}]"

    @classmethod
    def parse(cls, subtype: FeatureSubtype, text: str) -> FunctionDescriptionList:
        text = text.strip()
        if not (text.startswith("[") and text.endswith("]")):
            raise ValueError(f"not a bracketed description list: {text[:40]!r}")
        dec = json.JSONDecoder()
        body = text[1:-1]
        pairs = []
        pos = 0

        def skip(p):
            while p < len(body) and body[p] in " \t\r\n":
                p += 1
            return p

        pos = skip(pos)
        while pos < len(body):
            name, pos = dec.raw_decode(body, pos)
            pos = skip(pos)
            if body[pos:pos + 1] != ":":
                raise ValueError(f"expected ':' at {pos}")
            func, pos = dec.raw_decode(body, skip(pos + 1))
            if not isinstance(name, str) or not isinstance(func, str):
                raise ValueError("names and functions must be strings")
            pairs.append((name, func))
            pos = skip(pos)
            if pos < len(body):
                if body[pos] != ",":
                    raise ValueError(f"expected ',' at {pos}")
                pos = skip(pos + 1)
        return cls(subtype, tuple(pairs))

    def to_json(self) -> list:
        return [list(p) for p in self.pairs]

    @classmethod
    def from_json(cls, subtype: FeatureSubtype, obj) -> FunctionDescriptionList:
        return cls(subtype, tuple((n, f) for n, f in obj))


# ----------------------------------------------------------------------------
# function description prompt


@lru_cache(maxsize=None)
def default_shots() -> tuple[ExampleShot, ...]:
    raw = json.loads(resources.files("apkscope.data").joinpath("shots.json").read_text("utf-8"))
    return tuple(ExampleShot(**s) for s in raw)


def load_shots(path) -> tuple[ExampleShot, ...]:
    return tuple(ExampleShot(**s) for s in json.loads(Path(path).read_text("utf-8")))


def select_shots(feature_type: str, library, k: int = DEFAULT_K) -> list[ExampleShot]:
    """Same-type shots first, then the rest, each group in library order."""
    if k > len(library):
        raise NotEnoughShots(f"k={k} but only {len(library)} shots available")
    same = [s for s in library if s.feature_type == feature_type]
    other = [s for s in library if s.feature_type != feature_type]
    return (same + other)[:k]


def render_function_prompt(feature: FeatureRecord, shots, k: int = DEFAULT_K) -> RenderedPrompt:
    if k < 0:
        raise ValueError("k must be >= 0")
    if len(shots) < k:
        raise NotEnoughShots(f"k={k} but only {len(shots)} shots given")
    ftype = feature.subtype.feature_type
    subs = {"Feature type": ftype, "Target feature": feature.name}
    parts = [fill(load_template("function_system"), subs)]
    example = load_template("function_example")
    for i, shot in enumerate(shots[:k], 1):
        shot_vals = {
            "Example feature type": shot.feature_type,
            "Example feature": shot.feature_name,
            "Function corresponding to feature": shot.function_text,
        }
        parts.append(fill(example, shot_vals))
        subs.update({f"{key} [{i}]": v for key, v in shot_vals.items()})
    parts.append(fill(load_template("function_input"), subs))
    return RenderedPrompt(Purpose.FUNCTION_DESCRIPTION, "\n\n".join(parts), subs)


def parse_function_response(reply: str) -> str:
    text = " ".join(line.strip() for line in (reply or "").splitlines() if line.strip())
    text = re.sub(r"^function\s*:\s*", "", text, flags=re.IGNORECASE)
    text = text.strip().strip("\"'`“”").strip()
    if not text:
        raise EmptyReply("function description reply is empty")
    return text


# ----------------------------------------------------------------------------
# view summary prompt


def _check_lists(view: ViewKind, lists) -> tuple[FunctionDescriptionList, FunctionDescriptionList]:
    lists = tuple(lists)
    if tuple(fl.subtype for fl in lists) != view.subtypes:
        raise SubtypeMismatch(
            f"{view.label} expects {[s.value for s in view.subtypes]}, got {[fl.subtype.value for fl in lists]}"
        )
    return lists


def render_summary_prompt(bundle: ViewBundle, lists) -> RenderedPrompt:
    view = bundle.view
    first, second = _check_lists(view, lists)
    values = {
        "View type": view.label,
        "Package": bundle.package_name,
        "Feature type": view.feature_type_label,
        "Feature subtype 1": first.subtype.label,
        "Function descriptions list 1": first.render(),
        "Feature subtype 2": second.subtype.label,
        "Function descriptions list 2": second.render(),
        "View description": view.description,
        "Feature description 1": first.subtype.description,
        "Feature description 2": second.subtype.description,
    }
    return _render(Purpose.VIEW_SUMMARY, load_template("view_summary"), values)


def parse_summary_response(reply: str) -> str:
    text = (reply or "").strip()
    if not text:
        raise EmptyReply("view summary reply is empty")
    return text


# ----------------------------------------------------------------------------
# diagnostic report prompt

VERDICTS = ("malicious", "benign")

_REPORT_LIST_SLOTS = {
    FeatureSubtype.REQUESTED_PERMISSION: "requested permission's function description list",
    FeatureSubtype.USED_PERMISSION: "used permission's function description list",
    FeatureSubtype.RESTRICTED_API: "restricted API's function description list",
    FeatureSubtype.SUSPICIOUS_API: "suspicious API's function description list",
    FeatureSubtype.USES_FEATURE: "uses-feature's function description list",
    FeatureSubtype.URL: "URL's function description list",
}
_REPORT_SUMMARY_SLOTS = {
    ViewKind.PERMISSION: "permission view summary",
    ViewKind.API: "API view summary",
    ViewKind.URL_USES_FEATURE: "URL & uses-feature view summary",
}


def render_report_prompt(package: str, verdict: str, all_lists, all_summaries) -> RenderedPrompt:
    if verdict not in VERDICTS:
        raise ValueError(f"verdict must be one of {VERDICTS}")
    by_subtype = {fl.subtype: fl for fl in all_lists}
    by_view = {s.view: s for s in all_summaries}
    missing_lists = [s.value for s in FeatureSubtype if s not in by_subtype]
    if missing_lists:
        raise SubtypeMismatch(f"missing description lists: {missing_lists}")
    missing = [v.label for v in VIEW_ORDER if v not in by_view]
    if missing:
        raise MissingSummary(f"missing view summaries: {missing}")
    values = {"Package": package, "malicious or benign": verdict}
    values.update({slot: by_subtype[s].render() for s, slot in _REPORT_LIST_SLOTS.items()})
    values.update({slot: by_view[v].text for v, slot in _REPORT_SUMMARY_SLOTS.items()})
    return _render(Purpose.DIAGNOSTIC_REPORT, load_template("diagnostic_report"), values)


# ----------------------------------------------------------------------------
# alternative workflows (ablation only)

ALT_MODES = ("no_phase", "no_view")
NO_VIEW_SUMMARY_KEYS = {
    ViewKind.PERMISSION: "Permission View Summary",
    ViewKind.API: "API View Summary",
    ViewKind.URL_USES_FEATURE: "URL & uses-feature View Summary",
}
_NO_VIEW_LIST_SLOTS = {
    FeatureSubtype.REQUESTED_PERMISSION: "requested permission function descriptions",
    FeatureSubtype.USED_PERMISSION: "used permission function descriptions",
    FeatureSubtype.RESTRICTED_API: "restricted API function descriptions",
    FeatureSubtype.SUSPICIOUS_API: "suspicious API function descriptions",
    FeatureSubtype.USES_FEATURE: "uses-feature function descriptions",
    FeatureSubtype.URL: "URL function descriptions",
}


def render_no_phase_prompt(bundle: ViewBundle) -> RenderedPrompt:
    """One prompt per view asking for descriptions and summary together, as JSON."""
    view = bundle.view
    first, second = view.subtypes
    values = {
        "Package": bundle.package_name,
        "View type": view.label,
        "Feature subtype 1": first.label,
        "Feature list 1": json.dumps(bundle.names(first), ensure_ascii=False),
        "Feature subtype 2": second.label,
        "Feature list 2": json.dumps(bundle.names(second), ensure_ascii=False),
        "View description": view.description,
        "Feature type": view.feature_type_label,
        "Feature description 1": first.description,
        "Feature description 2": second.description,
    }
    return _render(Purpose.ALT_NO_PHASE, load_template("alt_no_phase"), values)


def render_no_view_description_prompt(feature: FeatureRecord) -> RenderedPrompt:
    values = {"Feature type": feature.subtype.feature_type, "Feature name": feature.name}
    return _render(Purpose.ALT_NO_VIEW_DESCRIPTION, load_template("alt_no_view_description"), values)


def render_no_view_summary_prompt(package: str, all_lists) -> RenderedPrompt:
    by_subtype = {fl.subtype: fl for fl in all_lists}
    missing = [s.value for s in FeatureSubtype if s not in by_subtype]
    if missing:
        raise SubtypeMismatch(f"missing description lists: {missing}")
    values = {"Package": package}
    values.update({slot: by_subtype[s].render() for s, slot in _NO_VIEW_LIST_SLOTS.items()})
    return _render(Purpose.ALT_NO_VIEW_SUMMARY, load_template("alt_no_view_summary"), values)


def render_alt_workflow_prompts(mode: str, bundles=None, feature=None, package=None, all_lists=None):
    """Dispatch for the two alternative workflows.

    ``no_phase`` takes the view bundles and returns one prompt per view.
    ``no_view`` takes either a single feature (description stage) or the
    package plus all six description lists (summary stage).
    """
    if mode == "no_phase":
        return [render_no_phase_prompt(b) for b in bundles]
    if mode == "no_view":
        if feature is not None:
            return render_no_view_description_prompt(feature)
        return render_no_view_summary_prompt(package, all_lists)
    raise ValueError(f"unknown workflow mode {mode!r}; expected one of {ALT_MODES}")


def _strict_json(reply: str):
    try:
        return json.loads(reply)
    except (json.JSONDecodeError, TypeError) as exc:
        raise AltReplyParseError(f"reply is not a JSON object: {exc}") from exc


def _desc_map(obj, where: str) -> tuple[tuple[str, str], ...]:
    if not isinstance(obj, dict) or not all(isinstance(k, str) and isinstance(v, str) for k, v in obj.items()):
        raise AltReplyParseError(f"{where}: expected an object of feature name -> function")
    return tuple(obj.items())


def parse_no_phase_reply(view: ViewKind, reply: str) -> tuple[list[FunctionDescriptionList], ViewSummary]:
    """Strict parse; malformed replies are reported, never repaired."""
    doc = _strict_json(reply)
    if not isinstance(doc, dict) or view.label not in doc or not isinstance(doc[view.label], dict):
        raise AltReplyParseError(f"missing top-level {view.label!r} object")
    body = doc[view.label]
    descs = body.get("Function description")
    summary = body.get("View summary")
    if not isinstance(descs, dict):
        raise AltReplyParseError("missing 'Function description' object")
    if not isinstance(summary, str) or not summary.strip():
        raise AltReplyParseError("missing 'View summary' text")
    lists = []
    for st in view.subtypes:
        if st.label not in descs:
            raise AltReplyParseError(f"missing {st.label!r} under 'Function description'")
        lists.append(FunctionDescriptionList(st, _desc_map(descs[st.label], st.label)))
    return lists, ViewSummary(view, summary.strip())


def parse_no_view_summary_reply(reply: str) -> list[ViewSummary]:
    doc = _strict_json(reply)
    if not isinstance(doc, dict):
        raise AltReplyParseError("reply is not a JSON object")
    out = []
    for view in VIEW_ORDER:
        key = NO_VIEW_SUMMARY_KEYS[view]
        text = doc.get(key)
        if not isinstance(text, str) or not text.strip():
            raise AltReplyParseError(f"missing {key!r}")
        out.append(ViewSummary(view, text.strip()))
    return out
