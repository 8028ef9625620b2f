"""End-to-end orchestration: config, dataset manifest, and the file-handoff stages.

Work directory layout::

    features/<apk_id>.json     extract
    labels.json                extract
    texts/<apk_id>.json        generate
    workflow.json              generate / vectorize (success counters)
    vectors.bin[.index.json]   vectorize
    model.bin, loss.tsv/.png   train
    metrics.tsv, predictions.tsv, confusion.png   eval
    reports/<apk_id>.txt       report / detect
    accounting/<stage>.json    every stage
    errors.tsv                 per-row failures (stage, apk_id, error, message)
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import plotting
from .classifier import LABELS, LabeledDataset, MlpConfig, MlpModel, evaluate, train
from .errors import AltReplyParseError, ApkScopeError, ConfigError, PromptError
from .features import (
    VIEW_ORDER,
    AppFeatures,
    FeatureRecord,
    PermissionApiMap,
    SuspiciousApiList,
    ViewBundle,
    assemble_views,
    derive_features,
)
from .gateway import Gateway, ProviderConfig
from .ingest import load_apk
from .memory import EntrySource, FunctionMemory, MemoryEntry, MemoryKey
from .prompts import (
    DEFAULT_K,
    FunctionDescriptionList,
    ViewSummary,
    default_shots,
    load_shots,
    parse_function_response,
    parse_no_phase_reply,
    parse_no_view_summary_reply,
    parse_summary_response,
    render_function_prompt,
    render_no_phase_prompt,
    render_no_view_description_prompt,
    render_no_view_summary_prompt,
    render_summary_prompt,
    select_shots,
)
from .report import RunAccounting, generate_report, summarize_run
from .representation import (
    ABLATION_MODES,
    SlotLayout,
    VectorSet,
    build_representation,
    description_texts,
    read_vectors,
    write_vectors,
    zero_matrix,
)

log = logging.getLogger(__name__)

PIPELINE_VERSION = "1"
WORKFLOWS = ("main", "no_phase", "no_view")


# ----------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class PipelineConfig:
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    memory_path: str | None = None  # None -> <workdir>/memory.jsonl
    memory_enabled: bool = True
    permission_map_path: str | None = None
    suspicious_api_paths: tuple[str, ...] = ()
    shots_path: str | None = None
    k_shots: int = DEFAULT_K
    used_permission_mode: str = "intersect"
    strict_dex: bool = False
    workflow: str = "main"
    classifier: dict = field(default_factory=dict)
    ablation: str | None = None
    concurrency: int = 4
    split_seed: int = 0
    init_seed: int = 0
    stub_seed: int = 0

    def __post_init__(self):
        if self.workflow not in WORKFLOWS:
            raise ConfigError(f"workflow must be one of {WORKFLOWS}")
        if self.ablation is not None and self.ablation not in ABLATION_MODES:
            raise ConfigError(f"ablation must be one of {sorted(ABLATION_MODES)}")
        bad = set(self.classifier) - {f for f in MlpConfig.__dataclass_fields__ if f not in ("input_dim", "init_seed")}
        if bad:
            raise ConfigError(f"unknown classifier keys: {sorted(bad)}")
        for p in (self.permission_map_path, self.shots_path, *self.suspicious_api_paths):
            if p is not None and not Path(p).is_file():
                raise ConfigError(f"referenced file does not exist: {p}")

    @property
    def provider_config(self) -> ProviderConfig:
        return replace(self.provider, stub_seed=self.stub_seed, concurrency=self.concurrency)

    @property
    def layout(self) -> SlotLayout:
        return SlotLayout(self.provider_config.dim)

    def mlp_config(self, input_dim: int) -> MlpConfig:
        return MlpConfig(input_dim=input_dim, init_seed=self.init_seed, **self.classifier)

    def to_json(self) -> dict:
        d = asdict(self)
        d["provider"] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self.provider).items()}
        d["suspicious_api_paths"] = list(self.suspicious_api_paths)
        return d

    @property
    def config_hash(self) -> str:
        canon = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]

    @property
    def seeds(self) -> dict:
        return {"split": self.split_seed, "init": self.init_seed, "stub": self.stub_seed}

    def artifact_meta(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "seeds": self.seeds,
            "pipeline_version": PIPELINE_VERSION,
            "provider": self.provider_config.provider_id,
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> PipelineConfig:
        d = dict(d)
        known = set(cls.__dataclass_fields__) | {"seeds"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        seeds = d.pop("seeds", {})
        for k in ("split", "init", "stub"):
            if k in seeds:
                d[f"{k}_seed"] = int(seeds[k])
        if "provider" in d:
            d["provider"] = ProviderConfig.from_dict(d["provider"])

        def resolve(p):
            if p is None or base_dir is None or Path(p).is_absolute():
                return p
            return str(base_dir / p)

        for key in ("memory_path", "permission_map_path", "shots_path"):
            if key in d:
                d[key] = resolve(d[key])
        if "suspicious_api_paths" in d:
            d["suspicious_api_paths"] = tuple(resolve(p) for p in d["suspicious_api_paths"])
        return cls(**d)

    @classmethod
    def load(cls, path) -> PipelineConfig:
        path = Path(path)
        try:
            data = json.loads(path.read_text("utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(data, path.parent)


# ----------------------------------------------------------------------------
# dataset manifest


@dataclass(frozen=True)
class ManifestRow:
    apk_id: str
    path: Path
    label: str | None


def read_manifest(path) -> list[ManifestRow]:
    """TSV with header ``apk_id<TAB>path<TAB>label``; relative paths are manifest-relative."""
    path = Path(path)
    rows, seen = [], set()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader((ln for ln in fh if not ln.startswith("#")), delimiter="\t")
        if reader.fieldnames is None:
            return []
        missing = {"apk_id", "path"} - set(reader.fieldnames)
        if missing:
            raise ConfigError(f"{path}: manifest lacks columns {sorted(missing)}")
        for rec in reader:
            aid = (rec["apk_id"] or "").strip()
            if not aid:
                continue
            if aid in seen:
                raise ConfigError(f"{path}: duplicate apk_id {aid!r}")
            seen.add(aid)
            label = (rec.get("label") or "").strip() or None
            if label is not None and label not in LABELS:
                raise ConfigError(f"{path}: label for {aid!r} must be malicious or benign")
            p = Path(rec["path"].strip())
            rows.append(ManifestRow(aid, p if p.is_absolute() else path.parent / p, label))
    return rows


def write_manifest(path, rows: list[tuple[str, str, str | None]]):
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        fh.write("apk_id\tpath\tlabel\n")
        for aid, p, label in rows:
            fh.write(f"{aid}\t{p}\t{label or ''}\n")


# ----------------------------------------------------------------------------
# work directory helpers


class Workdir:
    def __init__(self, root):
        self.root = root.root if isinstance(root, Workdir) else Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def sub(self, name: str) -> Path:
        p = self.root / name
        p.mkdir(parents=True, exist_ok=True)
        return p

    features = property(lambda self: self.sub("features"))
    texts = property(lambda self: self.sub("texts"))
    reports = property(lambda self: self.sub("reports"))
    accounting = property(lambda self: self.sub("accounting"))
    vectors = property(lambda self: self.root / "vectors.bin")
    model = property(lambda self: self.root / "model.bin")
    labels = property(lambda self: self.root / "labels.json")
    workflow = property(lambda self: self.root / "workflow.json")
    errors = property(lambda self: self.root / "errors.tsv")

    def memory_path(self, cfg: PipelineConfig) -> Path:
        return Path(cfg.memory_path) if cfg.memory_path else self.root / "memory.jsonl"

    def record_errors(self, stage: str, errors: list[tuple[str, str, str]]):
        """Replace this stage's rows in errors.tsv, keeping other stages' rows."""
        kept = []
        if self.errors.exists():
            for line in self.errors.read_text("utf-8").splitlines()[1:]:
                if line and line.split("\t", 1)[0] != stage:
                    kept.append(line)
        new = [f"{stage}\t{aid}\t{etype}\t{msg.replace(chr(9), ' ').replace(chr(10), ' ')}"
               for aid, etype, msg in errors]
        if kept or new:
            self.errors.write_text("stage\tapk_id\terror\tmessage\n" + "".join(ln + "\n" for ln in kept + new), "utf-8")
        elif self.errors.exists():
            self.errors.unlink()

    def read_json(self, path, default=None):
        return json.loads(Path(path).read_text("utf-8")) if Path(path).exists() else default

    def write_json(self, path, obj):
        Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True, ensure_ascii=False) + "\n", "utf-8")


@dataclass
class StageResult:
    ok: list[str] = field(default_factory=list)
    errors: list[tuple[str, str, str]] = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return bool(self.errors)


def _err(aid: str, exc: BaseException) -> tuple[str, str, str]:
    return aid, type(exc).__name__, str(exc)


# ----------------------------------------------------------------------------
# extract


def extract_app(row: ManifestRow, cfg: PipelineConfig, pmap=None, suspicious=None,
                from_features: bool = False) -> AppFeatures:
    if from_features or row.path.suffix == ".json":
        app = AppFeatures.load(row.path)
        return replace(app, apk_id=row.apk_id)
    pmap = pmap or PermissionApiMap.load(cfg.permission_map_path)
    suspicious = suspicious or SuspiciousApiList.load(*cfg.suspicious_api_paths)
    manifest, dex = load_apk(row.path, strict=cfg.strict_dex)
    feats = derive_features(manifest, dex, pmap, suspicious, cfg.used_permission_mode)
    return AppFeatures(row.apk_id, manifest.package_name, tuple(assemble_views(feats, manifest.package_name)))


def extract_stage(rows: list[ManifestRow], workdir, cfg: PipelineConfig, from_features: bool = False) -> StageResult:
    wd = Workdir(workdir)
    pmap = PermissionApiMap.load(cfg.permission_map_path)
    suspicious = SuspiciousApiList.load(*cfg.suspicious_api_paths)
    acc = RunAccounting()
    res = StageResult()
    labels = wd.read_json(wd.labels, {})
    for row in rows:
        t0 = time.perf_counter()
        try:
            app = extract_app(row, cfg, pmap, suspicious, from_features)
        except (ApkScopeError, OSError, ValueError, KeyError) as exc:
            log.warning("extract failed for %s: %s", row.apk_id, exc)
            res.errors.append(_err(row.apk_id, exc))
            continue
        acc.add_time("feature_extraction", time.perf_counter() - t0)
        (wd.features / f"{row.apk_id}.json").write_text(app.dumps(), "utf-8")
        labels[row.apk_id] = row.label
        res.ok.append(row.apk_id)
    acc.apps = len(res.ok)
    wd.write_json(wd.labels, labels)
    acc.save(wd.accounting / "extract.json")
    wd.record_errors("extract", res.errors)
    return res


# ----------------------------------------------------------------------------
# generate


@dataclass
class AppTexts:
    apk_id: str
    package_name: str
    workflow: str
    lists: list[FunctionDescriptionList]
    summaries: list[ViewSummary]
    parse_failures: int = 0
    ok: bool = True

    def to_json(self) -> dict:
        return {
            "apk_id": self.apk_id,
            "package_name": self.package_name,
            "workflow": self.workflow,
            "status": "ok" if self.ok else "failed",
            "parse_failures": self.parse_failures,
            "lists": {fl.subtype.value: fl.to_json() for fl in self.lists},
            "summaries": {s.view.value: s.text for s in self.summaries},
        }

    @classmethod
    def from_json(cls, d: dict) -> AppTexts:
        from .features import FeatureSubtype, ViewKind

        lists = [FunctionDescriptionList.from_json(FeatureSubtype(k), v) for k, v in d["lists"].items()]
        summaries = [ViewSummary(ViewKind(k), v) for k, v in d["summaries"].items()]
        return cls(d["apk_id"], d["package_name"], d["workflow"], lists, summaries,
                   int(d.get("parse_failures", 0)), d.get("status", "ok") == "ok")

    @classmethod
    def load(cls, path) -> AppTexts:
        return cls.from_json(json.loads(Path(path).read_text("utf-8")))


class TextGenerator:
    """Runs one of the three prompt workflows per app, views in parallel."""

    def __init__(self, gateway: Gateway, memory: FunctionMemory, shots=None, k: int = DEFAULT_K,
                 workflow: str = "main"):
        if workflow not in WORKFLOWS:
            raise ConfigError(f"workflow must be one of {WORKFLOWS}")
        self.gateway = gateway
        self.memory = memory
        self.shots = tuple(shots) if shots is not None else default_shots()
        self.k = k
        self.workflow = workflow

    def generate(self, app: AppFeatures) -> AppTexts:
        run = {"main": self._main_view, "no_phase": self._no_phase_view}.get(self.workflow)
        if run is None:
            return self._no_view(app)
        with ThreadPoolExecutor(max_workers=len(VIEW_ORDER)) as pool:
            results = list(pool.map(run, app.views))
        lists = [fl for r in results for fl in r[0]]
        summaries = [r[1] for r in results if r[1] is not None]
        failures = sum(r[2] for r in results)
        return AppTexts(app.apk_id, app.package_name, self.workflow, lists, summaries, failures, failures == 0)

    def describe(self, feature: FeatureRecord) -> str:
        key = MemoryKey(feature.subtype.feature_type, feature.name)
        hit = self.memory.lookup(key)
        if hit is not None:
            return hit.function_text
        shots = select_shots(feature.subtype.feature_type, self.shots, self.k)
        reply, _ = self.gateway.complete(render_function_prompt(feature, shots, self.k), phase="function_description")
        text = parse_function_response(reply)
        return self.memory.insert(MemoryEntry(key, text, self.memory.clock(), EntrySource.LLM)).function_text

    def _main_view(self, bundle: ViewBundle):
        failures = 0
        lists = []
        for st in bundle.view.subtypes:
            pairs = []
            for name in bundle.names(st):
                try:
                    pairs.append((name, self.describe(FeatureRecord(st, name))))
                except PromptError as exc:
                    log.warning("description parse failure for %s: %s", name, exc)
                    failures += 1
            lists.append(FunctionDescriptionList(st, tuple(pairs)))
        summary = None
        try:
            reply, _ = self.gateway.complete(render_summary_prompt(bundle, lists), phase="view_summary")
            summary = ViewSummary(bundle.view, parse_summary_response(reply))
        except PromptError as exc:
            log.warning("summary parse failure for %s: %s", bundle.view.label, exc)
            failures += 1
        return lists, summary, failures

    def _no_phase_view(self, bundle: ViewBundle):
        reply, _ = self.gateway.complete(render_no_phase_prompt(bundle), phase="view_summary")
        try:
            lists, summary = parse_no_phase_reply(bundle.view, reply)
        except AltReplyParseError as exc:
            log.info("no_phase reply rejected for %s: %s", bundle.view.label, exc)
            empty = [FunctionDescriptionList(st) for st in bundle.view.subtypes]
            return empty, None, 1
        return lists, summary, 0

    def _no_view(self, app: AppFeatures) -> AppTexts:
        lists, failures = [], 0
        for bundle in app.views:
            for st in bundle.view.subtypes:
                pairs = []
                for name in bundle.names(st):
                    prompt = render_no_view_description_prompt(FeatureRecord(st, name))
                    reply, _ = self.gateway.complete(prompt, phase="function_description")
                    try:
                        pairs.append((name, parse_function_response(reply)))
                    except PromptError:
                        failures += 1
                lists.append(FunctionDescriptionList(st, tuple(pairs)))
        summaries = []
        reply, _ = self.gateway.complete(render_no_view_summary_prompt(app.package_name, lists), phase="view_summary")
        try:
            summaries = parse_no_view_summary_reply(reply)
        except AltReplyParseError as exc:
            log.info("no_view summary rejected for %s: %s", app.apk_id, exc)
            failures += 1
        return AppTexts(app.apk_id, app.package_name, "no_view", lists, summaries, failures, failures == 0)


def make_gateway(cfg: PipelineConfig) -> Gateway:
    return Gateway(cfg.provider_config)


def make_memory(cfg: PipelineConfig, wd: Workdir, enabled: bool | None = None) -> FunctionMemory:
    on = cfg.memory_enabled if enabled is None else enabled
    return FunctionMemory(wd.memory_path(cfg), enabled=on)


def _feature_files(wd: Workdir) -> list[Path]:
    return sorted(wd.features.glob("*.json"))


def _collect_calls(acc: RunAccounting, gateway: Gateway):
    for rec in sorted(gateway.calls, key=lambda r: (r.phase, r.purpose, r.usage.prompt_tokens,
                                                    r.usage.response_tokens, r.usage.wall_time)):
        if rec.phase != "report":
            acc.add_call(rec)


def generate_stage(workdir, cfg: PipelineConfig, gateway: Gateway | None = None,
                   memory_enabled: bool | None = None, workflow: str | None = None) -> StageResult:
    wd = Workdir(workdir)
    gateway = gateway or make_gateway(cfg)
    memory = make_memory(cfg, wd, memory_enabled)
    shots = load_shots(cfg.shots_path) if cfg.shots_path else default_shots()
    gen = TextGenerator(gateway, memory, shots, cfg.k_shots, workflow or cfg.workflow)
    res = StageResult()
    stats = {"workflow": gen.workflow, "apps": 0, "successful_outputs": 0, "failed_outputs": 0, "parse_failures": 0}
    for path in _feature_files(wd):
        app = AppFeatures.load(path)
        stats["apps"] += 1
        try:
            texts = gen.generate(app)
        except ApkScopeError as exc:
            log.warning("generate failed for %s: %s", app.apk_id, exc)
            res.errors.append(_err(app.apk_id, exc))
            stats["failed_outputs"] += 1
            continue
        stats["parse_failures"] += texts.parse_failures
        stats["successful_outputs" if texts.ok else "failed_outputs"] += 1
        wd.write_json(wd.texts / f"{app.apk_id}.json", texts.to_json())
        if texts.ok:
            res.ok.append(app.apk_id)
    acc = RunAccounting(apps=stats["apps"], memory=memory.stats, memory_enabled=memory.enabled)
    _collect_calls(acc, gateway)
    acc.save(wd.accounting / "generate.json")
    wd.write_json(wd.workflow, stats)
    wd.record_errors("generate", res.errors)
    return res


# ----------------------------------------------------------------------------
# vectorize / train / eval


def vectorize_texts(texts: AppTexts, gateway: Gateway, layout: SlotLayout):
    descs = description_texts(texts.lists)
    by_view = {s.view: s.text for s in texts.summaries}
    sums = [by_view[v] for v in VIEW_ORDER]
    return build_representation(texts.apk_id, descs, sums, gateway, layout)


def vectorize_stage(workdir, cfg: PipelineConfig, gateway: Gateway | None = None) -> StageResult:
    wd = Workdir(workdir)
    gateway = gateway or make_gateway(cfg)
    layout = cfg.layout
    labels = wd.read_json(wd.labels, {})
    res = StageResult()
    ids, rows = [], []
    for path in sorted(wd.texts.glob("*.json")):
        texts = AppTexts.load(path)
        if not texts.ok:
            continue
        try:
            rep = vectorize_texts(texts, gateway, layout)
        except ApkScopeError as exc:
            res.errors.append(_err(texts.apk_id, exc))
            continue
        ids.append(texts.apk_id)
        rows.append(rep.values)
        res.ok.append(texts.apk_id)
    matrix = np.vstack(rows) if rows else np.zeros((0, layout.total_dim))
    write_vectors(wd.vectors, VectorSet(layout, ids, matrix, [labels.get(i) for i in ids], cfg.artifact_meta()))
    acc = RunAccounting(apps=len(ids))
    _collect_calls(acc, gateway)
    acc.save(wd.accounting / "vectorize.json")
    stats = wd.read_json(wd.workflow, {})
    stats["successful_embeddings"] = len(ids)
    wd.write_json(wd.workflow, stats)
    wd.record_errors("vectorize", res.errors)
    return res


def load_dataset(wd: Workdir, cfg: PipelineConfig) -> tuple[VectorSet, LabeledDataset]:
    vs = read_vectors(wd.vectors)
    keep = [i for i, lab in enumerate(vs.labels) if lab in LABELS]
    if len(keep) != len(vs.labels):
        log.warning("%d unlabeled rows ignored", len(vs.labels) - len(keep))
    mlp_fraction = cfg.classifier.get("train_fraction", 0.8)
    data = LabeledDataset.from_labels(
        [vs.apk_ids[i] for i in keep], vs.matrix[keep], [vs.labels[i] for i in keep],
        cfg.split_seed, mlp_fraction,
    )
    return vs, data


def train_stage(workdir, cfg: PipelineConfig, ablate: str | None = None) -> MlpModel:
    wd = Workdir(workdir)
    vs, data = load_dataset(wd, cfg)
    ablate = ablate or cfg.ablation
    data.X = zero_matrix(data.X, vs.layout, ablate)
    model = train(data, cfg.mlp_config(vs.layout.total_dim))
    meta = {**cfg.artifact_meta(), "ablation": ablate, "layout": vs.layout.to_json()}
    model.save(wd.model, meta)
    with (wd.root / "loss.tsv").open("w", encoding="utf-8") as fh:
        fh.write(f"# config_hash: {cfg.config_hash}\n# seeds: {json.dumps(cfg.seeds, sort_keys=True)}\n")
        fh.write("epoch\tloss\n" + "".join(f"{e}\t{v:.10f}\n" for e, v in model.history))
    plotting.plot_loss(model.history, wd.root / "loss.png")
    return model


def _tsv_header(cfg: PipelineConfig, extra: dict | None = None) -> str:
    lines = [f"# config_hash: {cfg.config_hash}", f"# seeds: {json.dumps(cfg.seeds, sort_keys=True)}"]
    for k, v in (extra or {}).items():
        lines.append(f"# {k}: {v}")
    return "\n".join(lines) + "\n"


def eval_stage(workdir, cfg: PipelineConfig, ablate: str | None = None, out_name: str = "metrics"):
    wd = Workdir(workdir)
    vs, data = load_dataset(wd, cfg)
    model = MlpModel.load(wd.model)
    ablate = ablate or cfg.ablation
    data.X = zero_matrix(data.X, vs.layout, ablate)
    t0 = time.perf_counter()
    report = evaluate(model, data)
    test = data.test_split()
    labels, scores = model.predict_batch(test.X)
    elapsed = time.perf_counter() - t0
    header = _tsv_header(cfg, {"ablation": ablate or "none", "test_rows": len(test.y)})
    (wd.root / f"{out_name}.tsv").write_text(header + report.to_tsv(), "utf-8")
    pred_lines = "".join(
        f"{aid}\t{'malicious' if y else 'benign'}\t{lab}\t{s:.8f}\n"
        for aid, y, lab, s in zip(test.apk_ids, test.y.astype(int), labels, scores)
    )
    (wd.root / f"predictions{'' if out_name == 'metrics' else '.' + out_name}.tsv").write_text(
        header + "apk_id\ttrue\tpredicted\tscore\n" + pred_lines, "utf-8")
    plotting.plot_confusion(report, wd.root / f"{out_name}_confusion.png")
    acc = RunAccounting(apps=len(test.y))
    acc.add_time("embedding_detection", elapsed)
    acc.save(wd.accounting / "eval.json")
    return report


# ----------------------------------------------------------------------------
# reports and detection


def report_stage(workdir, cfg: PipelineConfig, gateway: Gateway | None = None) -> StageResult:
    wd = Workdir(workdir)
    gateway = gateway or make_gateway(cfg)
    vs = read_vectors(wd.vectors)
    model = MlpModel.load(wd.model)
    res = StageResult()
    verdicts, scores = model.predict_batch(vs.matrix) if vs.apk_ids else ([], [])
    for aid, verdict in zip(vs.apk_ids, verdicts):
        texts = AppTexts.load(wd.texts / f"{aid}.json")
        try:
            rep = generate_report(aid, texts.package_name, verdict, texts.lists, texts.summaries, gateway,
                                  cfg.artifact_meta())
        except ApkScopeError as exc:
            res.errors.append(_err(aid, exc))
            continue
        rep.save(wd.reports)
        res.ok.append(aid)
    wd.record_errors("report", res.errors)
    return res


@dataclass(frozen=True)
class Detection:
    apk_id: str
    label: str
    score: float
    report_path: Path


def detect(source, workdir, cfg: PipelineConfig, apk_id: str | None = None,
           gateway: Gateway | None = None) -> Detection:
    """Single-app path: extract, generate, embed, classify, report."""
    wd = Workdir(workdir)
    source = Path(source)
    aid = apk_id or source.stem
    gateway = gateway or make_gateway(cfg)
    app = extract_app(ManifestRow(aid, source, None), cfg)
    memory = make_memory(cfg, wd)
    shots = load_shots(cfg.shots_path) if cfg.shots_path else default_shots()
    texts = TextGenerator(gateway, memory, shots, cfg.k_shots, "main").generate(app)
    if not texts.ok:
        raise PromptError(f"{aid}: {texts.parse_failures} replies could not be parsed")
    model = MlpModel.load(wd.model)
    layout = SlotLayout.from_json(model.meta["layout"]) if "layout" in model.meta else cfg.layout
    rep = vectorize_texts(texts, gateway, layout)
    label, score = model.predict(rep.values)
    report = generate_report(aid, texts.package_name, label, texts.lists, texts.summaries, gateway,
                             cfg.artifact_meta())
    path = report.save(wd.reports)
    return Detection(aid, label, score, path)


# ----------------------------------------------------------------------------
# run summary


def load_accounting(workdir) -> RunAccounting:
    wd = Workdir(workdir)
    total = RunAccounting()
    for stage in ("extract", "generate", "vectorize", "eval"):
        p = wd.accounting / f"{stage}.json"
        if p.exists():
            total = total.merge(RunAccounting.load(p))
    return total


def run_summary_stage(workdir, cfg: PipelineConfig | None = None) -> str:
    wd = Workdir(workdir)
    acc = load_accounting(wd)
    table = summarize_run(acc)
    header = _tsv_header(cfg) if cfg is not None else ""
    (wd.root / "run_summary.tsv").write_text(header + table, "utf-8")
    plotting.plot_phase_times(acc, wd.root / "run_summary.png")
    return table
