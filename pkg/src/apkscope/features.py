"""Feature subtypes, their three observation views, and derivation from parsed APKs."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path

from .errors import ConfigError, MapNotLoaded
from .ingest import DexModel, ManifestModel, extract_urls


class ViewKind(str, Enum):
    PERMISSION = "permission_view"
    API = "api_view"
    URL_USES_FEATURE = "url_uses_feature_view"

    @property
    def label(self) -> str:
        return _VIEW_LABELS[self]

    @property
    def description(self) -> str:
        return _VIEW_DESCRIPTIONS[self]

    @property
    def feature_type_label(self) -> str:
        """What the view's features are called inside prompts."""
        return _VIEW_FEATURE_TYPES[self]

    @property
    def subtypes(self) -> tuple[FeatureSubtype, FeatureSubtype]:
        return tuple(s for s in FeatureSubtype if s.view is self)


class FeatureSubtype(str, Enum):
    REQUESTED_PERMISSION = "requested_permission"
    USED_PERMISSION = "used_permission"
    RESTRICTED_API = "restricted_api"
    SUSPICIOUS_API = "suspicious_api"
    URL = "url"
    USES_FEATURE = "uses_feature"

    @property
    def view(self) -> ViewKind:
        return _SUBTYPE_VIEW[self]

    @property
    def feature_type(self) -> str:
        """One of the four feature types: permission, API, URL, uses-feature."""
        return _SUBTYPE_FEATURE_TYPE[self]

    @property
    def label(self) -> str:
        return _SUBTYPE_LABELS[self]

    @property
    def description(self) -> str:
        return _SUBTYPE_DESCRIPTIONS[self]


_SUBTYPE_VIEW = {
    FeatureSubtype.REQUESTED_PERMISSION: ViewKind.PERMISSION,
    FeatureSubtype.USED_PERMISSION: ViewKind.PERMISSION,
    FeatureSubtype.RESTRICTED_API: ViewKind.API,
    FeatureSubtype.SUSPICIOUS_API: ViewKind.API,
    FeatureSubtype.URL: ViewKind.URL_USES_FEATURE,
    FeatureSubtype.USES_FEATURE: ViewKind.URL_USES_FEATURE,
}
_SUBTYPE_FEATURE_TYPE = {
    FeatureSubtype.REQUESTED_PERMISSION: "permission",
    FeatureSubtype.USED_PERMISSION: "permission",
    FeatureSubtype.RESTRICTED_API: "API",
    FeatureSubtype.SUSPICIOUS_API: "API",
    FeatureSubtype.URL: "URL",
    FeatureSubtype.USES_FEATURE: "uses-feature",
}
_SUBTYPE_LABELS = {
    FeatureSubtype.REQUESTED_PERMISSION: "requested permission",
    FeatureSubtype.USED_PERMISSION: "used permission",
    FeatureSubtype.RESTRICTED_API: "restricted API",
    FeatureSubtype.SUSPICIOUS_API: "suspicious API",
    FeatureSubtype.URL: "URL",
    FeatureSubtype.USES_FEATURE: "uses-feature",
}
_SUBTYPE_DESCRIPTIONS = {
    FeatureSubtype.REQUESTED_PERMISSION:
        "The set of permissions required by the application as declared in the xml file.",
    FeatureSubtype.USED_PERMISSION:
        "The set of permissions actually used in the application source code.",
    FeatureSubtype.RESTRICTED_API:
        "The set of APIs that require specific permissions to be applied.",
    FeatureSubtype.SUSPICIOUS_API:
        "Some other sensitive APIs used by the application, which may be related to the access "
        "of sensitive information and resources.",
    FeatureSubtype.URL:
        "URLs found in the source code, some of these addresses might be involved in botnets and "
        "thus present in several malware samples.",
    FeatureSubtype.USES_FEATURE:
        "Hardware or software feature requirements registered in the xml file, requiring access to "
        "specific hardware clearly has security implications, as the use of certain hardware "
        "combinations often reflects potentially malicious behavior.",
}
_VIEW_LABELS = {
    ViewKind.PERMISSION: "Permission View",
    ViewKind.API: "API View",
    ViewKind.URL_USES_FEATURE: "URL & uses-feature View",
}
_VIEW_DESCRIPTIONS = {
    ViewKind.PERMISSION:
        "Perspectives on application behavior based on the permissions in the application.",
    ViewKind.API:
        "Perspectives on application behavior based on the use of sensitive APIs in the "
        "application source code.",
    ViewKind.URL_USES_FEATURE:
        "Perspectives on application behavior based on the uses-features declared in xml file and "
        "the URLs coding in the APP's source code.",
}
_VIEW_FEATURE_TYPES = {
    ViewKind.PERMISSION: "permission",
    ViewKind.API: "API",
    ViewKind.URL_USES_FEATURE: "URL & uses-feature",
}

VIEW_ORDER = (ViewKind.PERMISSION, ViewKind.API, ViewKind.URL_USES_FEATURE)
FEATURE_TYPES = ("permission", "API", "URL", "uses-feature")


@dataclass(frozen=True)
class FeatureRecord:
    subtype: FeatureSubtype
    name: str

    def __post_init__(self):
        if not self.name:
            raise ValueError("feature name must be non-empty")


@dataclass(frozen=True)
class ViewBundle:
    package_name: str
    view: ViewKind
    subtype_lists: dict[FeatureSubtype, tuple[FeatureRecord, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if tuple(self.subtype_lists) != self.view.subtypes:
            raise ValueError(f"{self.view.label} must hold exactly {self.view.subtypes}")

    def names(self, subtype: FeatureSubtype) -> list[str]:
        return [r.name for r in self.subtype_lists[subtype]]

    @property
    def is_empty(self) -> bool:
        return not any(self.subtype_lists.values())

    def to_json(self) -> dict:
        return {
            "view": self.view.value,
            "package_name": self.package_name,
            "subtypes": {s.value: self.names(s) for s in self.view.subtypes},
        }

    @classmethod
    def from_json(cls, obj: dict) -> ViewBundle:
        view = ViewKind(obj["view"])
        lists = {
            s: tuple(FeatureRecord(s, n) for n in obj["subtypes"].get(s.value, []))
            for s in view.subtypes
        }
        return cls(package_name=obj["package_name"], view=view, subtype_lists=lists)


# ----------------------------------------------------------------------------
# data files


@dataclass(frozen=True)
class PermissionApiMap:
    api_to_permissions: dict[str, frozenset[str]]
    version: str = "unversioned"

    def __contains__(self, api: str) -> bool:
        return api in self.api_to_permissions

    def __getitem__(self, api: str) -> frozenset[str]:
        return self.api_to_permissions[api]

    @classmethod
    def parse(cls, text: str) -> PermissionApiMap:
        mapping: dict[str, set[str]] = {}
        version = "unversioned"
        for lineno, line in enumerate(text.splitlines(), 1):
            stripped = line.strip()
            if not stripped:
                continue
            if stripped.startswith("#"):
                head = stripped.lstrip("#").strip()
                if head.lower().startswith("version:"):
                    version = head.split(":", 1)[1].strip()
                continue
            parts = stripped.split("\t")
            if len(parts) != 2 or not all(p.strip() for p in parts):
                raise ConfigError(f"permission map line {lineno}: expected 'api<TAB>permission'")
            mapping.setdefault(parts[0].strip(), set()).add(parts[1].strip())
        return cls({k: frozenset(v) for k, v in mapping.items()}, version)

    @classmethod
    def load(cls, path=None) -> PermissionApiMap:
        if path is None:
            text = resources.files("apkscope.data").joinpath("permission_map.tsv").read_text("utf-8")
        else:
            text = Path(path).read_text("utf-8")
        return cls.parse(text)


@dataclass(frozen=True)
class SuspiciousApiList:
    """Canonical API names; entries written ``*.name`` match that method on any class."""

    exact: frozenset[str] = frozenset()
    any_class_methods: frozenset[str] = frozenset()

    def matches(self, canonical: str) -> bool:
        if canonical in self.exact:
            return True
        return canonical.rsplit(".", 1)[-1] in self.any_class_methods

    @classmethod
    def parse(cls, *texts: str) -> SuspiciousApiList:
        exact, wild = set(), set()
        for text in texts:
            for line in text.splitlines():
                entry = line.split("#", 1)[0].strip()
                if not entry:
                    continue
                if entry.startswith("*."):
                    wild.add(entry[2:])
                else:
                    exact.add(entry)
        return cls(frozenset(exact), frozenset(wild))

    @classmethod
    def load(cls, *paths) -> SuspiciousApiList:
        if not paths:
            pkg = resources.files("apkscope.data")
            return cls.parse(
                pkg.joinpath("suspicious_apis.txt").read_text("utf-8"),
                pkg.joinpath("suspicious_apis_extended.txt").read_text("utf-8"),
            )
        return cls.parse(*(Path(p).read_text("utf-8") for p in paths))


# ----------------------------------------------------------------------------
# derivation

USED_PERMISSION_MODES = ("intersect", "map_only")


def derive_features(
    manifest: ManifestModel,
    dex: DexModel,
    permission_map: PermissionApiMap | None,
    suspicious: SuspiciousApiList,
    used_permission_mode: str = "intersect",
) -> list[FeatureRecord]:
    if permission_map is None:
        raise MapNotLoaded("a permission/API map is required to derive restricted APIs")
    if used_permission_mode not in USED_PERMISSION_MODES:
        raise ConfigError(f"used_permission_mode must be one of {USED_PERMISSION_MODES}")

    apis = list(dict.fromkeys(m.canonical for m in dex.method_refs))
    restricted = [a for a in apis if a in permission_map]
    requested = set(manifest.requested_permissions)
    used: dict[str, None] = {}
    for api in restricted:
        for perm in sorted(permission_map[api]):
            if used_permission_mode == "map_only" or perm in requested:
                used.setdefault(perm, None)

    S = FeatureSubtype
    out = [FeatureRecord(S.REQUESTED_PERMISSION, p) for p in manifest.requested_permissions]
    out += [FeatureRecord(S.USED_PERMISSION, p) for p in used]
    out += [FeatureRecord(S.RESTRICTED_API, a) for a in restricted]
    out += [FeatureRecord(S.SUSPICIOUS_API, a) for a in apis if suspicious.matches(a)]
    out += [FeatureRecord(S.URL, u) for u in extract_urls(dex)]
    out += [FeatureRecord(S.USES_FEATURE, f) for f in manifest.uses_features]
    return out


def assemble_views(features: list[FeatureRecord], package: str) -> list[ViewBundle]:
    lists: dict[FeatureSubtype, dict[str, FeatureRecord]] = {s: {} for s in FeatureSubtype}
    for rec in features:
        lists[rec.subtype].setdefault(rec.name, rec)
    return [
        ViewBundle(package, view, {s: tuple(lists[s].values()) for s in view.subtypes})
        for view in VIEW_ORDER
    ]


# ----------------------------------------------------------------------------
# per-app feature documents (the extract stage's output)


@dataclass(frozen=True)
class AppFeatures:
    apk_id: str
    package_name: str
    views: tuple[ViewBundle, ViewBundle, ViewBundle]

    def view(self, kind: ViewKind) -> ViewBundle:
        return self.views[VIEW_ORDER.index(kind)]

    def to_json(self) -> dict:
        return {
            "apk_id": self.apk_id,
            "package_name": self.package_name,
            "views": [v.to_json() for v in self.views],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_json(cls, obj: dict) -> AppFeatures:
        views = {ViewKind(v["view"]): ViewBundle.from_json(v) for v in obj["views"]}
        package = obj.get("package_name", "")
        ordered = tuple(
            views.get(k) or ViewBundle(package, k, {s: () for s in k.subtypes}) for k in VIEW_ORDER
        )
        return cls(apk_id=obj["apk_id"], package_name=package, views=ordered)

    @classmethod
    def load(cls, path) -> AppFeatures:
        return cls.from_json(json.loads(Path(path).read_text("utf-8")))
