"""Run accounting, the run-summary table, and diagnostic report generation."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import EmptyReply
from .features import VIEW_ORDER
from .gateway import CallRecord, UsageStats
from .memory import MemoryStats
from .prompts import render_report_prompt

PHASES = ("feature_extraction", "function_description", "view_summary", "embedding_detection")


@dataclass
class RunAccounting:
    """Per-phase usage for one run. ``apps`` counts processed apps (the averaging base)."""

    apps: int = 0
    phases: dict[str, UsageStats] = field(default_factory=lambda: {p: UsageStats() for p in PHASES})
    memory: MemoryStats = field(default_factory=MemoryStats)
    memory_enabled: bool = True
    calls: list[CallRecord] = field(default_factory=list)

    def add_call(self, rec: CallRecord):
        if rec.phase not in PHASES:
            raise ValueError(f"unknown phase {rec.phase!r}; expected one of {PHASES}")
        self.calls.append(rec)
        self.phases[rec.phase] = self.phases[rec.phase] + rec.usage

    def add_time(self, phase: str, seconds: float):
        """Local work (parsing, prediction), logged as a zero-call record so totals stay conserved."""
        self.add_call(CallRecord(phase, "local", UsageStats(wall_time=seconds)))

    def merge(self, other: RunAccounting) -> RunAccounting:
        out = RunAccounting(
            apps=max(self.apps, other.apps),
            phases={p: self.phases[p] + other.phases[p] for p in PHASES},
            memory=MemoryStats(self.memory.hits + other.memory.hits, self.memory.misses + other.memory.misses),
            memory_enabled=self.memory_enabled and other.memory_enabled,
            calls=self.calls + other.calls,
        )
        return out

    @property
    def total(self) -> UsageStats:
        total = UsageStats()
        for p in PHASES:
            total = total + self.phases[p]
        return total

    def to_json(self) -> dict:
        return {
            "apps": self.apps,
            "phases": {p: self.phases[p].to_json() for p in PHASES},
            "memory": {"hits": self.memory.hits, "misses": self.memory.misses, "enabled": self.memory_enabled},
            "calls": [{"phase": c.phase, "purpose": c.purpose, **c.usage.to_json()} for c in self.calls],
        }

    @classmethod
    def from_json(cls, d: dict) -> RunAccounting:
        calls = [
            CallRecord(c["phase"], c["purpose"], UsageStats(
                c["prompt_tokens"], c["response_tokens"], c["wall_time"], c["call_count"]))
            for c in d.get("calls", [])
        ]
        mem = d.get("memory", {})
        return cls(
            apps=int(d.get("apps", 0)),
            phases={p: UsageStats.from_json(d["phases"][p]) if p in d.get("phases", {}) else UsageStats()
                    for p in PHASES},
            memory=MemoryStats(int(mem.get("hits", 0)), int(mem.get("misses", 0))),
            memory_enabled=bool(mem.get("enabled", True)),
            calls=calls,
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n", "utf-8")

    @classmethod
    def load(cls, path) -> RunAccounting:
        return cls.from_json(json.loads(Path(path).read_text("utf-8")))


SUMMARY_COLUMNS = (
    "phase", "apps", "calls", "prompt_tokens", "response_tokens", "wall_time_s",
    "avg_calls", "avg_prompt_tokens", "avg_response_tokens", "avg_wall_time_s",
)


def summarize_run(acc: RunAccounting) -> str:
    """TSV: one row per phase (averages over ``apps``), a total row, then the memory hit rate."""
    n = acc.apps

    def row(name: str, u: UsageStats) -> str:
        def avg(v):
            return f"{v / n:.6f}" if n else "undefined"

        cells = [name, str(n), str(u.call_count), str(u.prompt_tokens), str(u.response_tokens),
                 f"{u.wall_time:.6f}", avg(u.call_count), avg(u.prompt_tokens),
                 avg(u.response_tokens), avg(u.wall_time)]
        return "\t".join(cells) + "\n"

    out = "\t".join(SUMMARY_COLUMNS) + "\n"
    for p in PHASES:
        out += row(p, acc.phases[p])
    out += row("total", acc.total)
    rate = acc.memory.hit_rate if acc.memory_enabled else 0.0
    out += "\n"
    out += "memory_hits\tmemory_misses\tmemory_hit_rate\n"
    out += f"{acc.memory.hits}\t{acc.memory.misses}\t{'undefined' if rate is None else f'{rate:.6f}'}\n"
    return out


def parse_summary_table(text: str) -> dict[str, dict[str, str]]:
    """Inverse of the phase block of ``summarize_run`` (used by tests and tooling)."""
    body = "".join(ln + "\n" for ln in text.splitlines() if not ln.startswith("#"))
    lines = body.split("\n\n", 1)[0].strip().splitlines()
    header = lines[0].split("\t")
    return {cells[0]: dict(zip(header, cells)) for cells in (ln.split("\t") for ln in lines[1:])}


# ----------------------------------------------------------------------------
# diagnostic reports


@dataclass(frozen=True)
class DiagnosticReport:
    apk_id: str
    verdict: str
    report_text: str
    provenance: dict

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / f"{self.apk_id}.txt"
        path.write_text(self.report_text.rstrip("\n") + "\n", "utf-8")
        sidecar = directory / f"{self.apk_id}.provenance.json"
        sidecar.write_text(json.dumps(self.provenance, indent=1, sort_keys=True, ensure_ascii=False) + "\n", "utf-8")
        return path


def generate_report(apk_id: str, package: str, verdict: str, lists, summaries, gateway,
                    meta: dict | None = None) -> DiagnosticReport:
    prompt = render_report_prompt(package, verdict, lists, summaries)
    reply, usage = gateway.complete(prompt, phase="report")
    if not reply.strip():
        raise EmptyReply("report reply is empty")
    by_view = {s.view: s.text for s in summaries}
    provenance = {
        "apk_id": apk_id,
        "package": package,
        "verdict": verdict,
        "lists": {fl.subtype.value: fl.render() for fl in lists},
        "summaries": {v.value: by_view[v] for v in VIEW_ORDER},
        "prompt_sha256": hashlib.sha256(prompt.text.encode("utf-8")).hexdigest(),
        "usage": usage.to_json(),
        **({"meta": meta} if meta else {}),
    }
    return DiagnosticReport(apk_id, verdict, reply, provenance)
