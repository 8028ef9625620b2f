"""Chat-completion and embedding access: OpenAI-compatible HTTP or an offline stub.

Wire shape (HTTP provider)::

    POST {endpoint}/chat/completions
        {"model": ..., "messages": [{"role": "user", "content": <prompt>}], "temperature": 0}
      -> {"choices": [{"message": {"content": <reply>}}],
          "usage": {"prompt_tokens": n, "completion_tokens": m}}

    POST {endpoint}/embeddings
        {"model": ..., "input": [<text>, ...]}
      -> {"data": [{"index": i, "embedding": [...]}, ...], "usage": {"prompt_tokens": n}}

The bearer token is read from the environment variable named by
``ProviderConfig.api_key_env`` (default ``APKSCOPE_API_KEY``).
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field, replace
from functools import lru_cache

import httpx
import numpy as np

from .errors import (
    ConfigError,
    Exhausted,
    GatewayError,
    HttpStatus,
    MalformedProviderReply,
    ProviderConnectionError,
    ProviderTimeout,
)
from .prompts import FunctionDescriptionList, Purpose, RenderedPrompt
from .features import FeatureSubtype

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProviderConfig:
    provider: str = "stub"
    endpoint: str = "https://api.openai.com/v1"
    model_name: str = "gpt-4-1106-preview"
    embed_model_name: str = "text-embedding-ada-002"
    api_key_env: str = "APKSCOPE_API_KEY"
    timeout: float = 60.0
    max_retries: int = 3
    retry_backoff: tuple[float, ...] = (1.0, 2.0, 4.0)
    temperature: float = 0.0
    concurrency: int = 4
    embed_dim: int = 1536
    # stub-only knobs
    stub_seed: int = 0
    stub_dim: int = 64
    stub_malformed_rate: float = 0.0
    stub_latency_per_token: float = 0.001

    def __post_init__(self):
        if self.provider not in ("stub", "http"):
            raise ConfigError(f"provider must be 'stub' or 'http', not {self.provider!r}")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")
        if self.timeout <= 0:
            raise ConfigError("timeout must be > 0")
        if self.concurrency < 1:
            raise ConfigError("concurrency must be >= 1")
        if not 0.0 <= self.stub_malformed_rate <= 1.0:
            raise ConfigError("stub_malformed_rate must lie in [0, 1]")

    @property
    def dim(self) -> int:
        return self.stub_dim if self.provider == "stub" else self.embed_dim

    @property
    def provider_id(self) -> str:
        if self.provider == "stub":
            return f"stub(seed={self.stub_seed},dim={self.stub_dim})"
        return f"http({self.model_name},{self.embed_model_name})"

    def backoff(self, attempt: int) -> float:
        if not self.retry_backoff:
            return 0.0
        return self.retry_backoff[min(attempt, len(self.retry_backoff) - 1)]

    @classmethod
    def from_dict(cls, d: dict) -> ProviderConfig:
        d = dict(d)
        if "retry_backoff" in d:
            d["retry_backoff"] = tuple(float(x) for x in d["retry_backoff"])
        return cls(**d)


@dataclass
class UsageStats:
    prompt_tokens: int = 0
    response_tokens: int = 0
    wall_time: float = 0.0
    call_count: int = 0

    def __add__(self, other: UsageStats) -> UsageStats:
        return UsageStats(
            self.prompt_tokens + other.prompt_tokens,
            self.response_tokens + other.response_tokens,
            self.wall_time + other.wall_time,
            self.call_count + other.call_count,
        )

    def to_json(self) -> dict:
        return {
            "prompt_tokens": self.prompt_tokens,
            "response_tokens": self.response_tokens,
            "wall_time": self.wall_time,
            "call_count": self.call_count,
        }

    @classmethod
    def from_json(cls, d: dict) -> UsageStats:
        return cls(**d)


@dataclass(frozen=True)
class CallRecord:
    phase: str
    purpose: str
    usage: UsageStats


@dataclass
class _ProviderResult:
    text: str = ""
    vectors: list = field(default_factory=list)
    prompt_tokens: int = 0
    response_tokens: int = 0
    elapsed: float = 0.0


# ----------------------------------------------------------------------------
# stub provider


def _hash_int(*parts) -> int:
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(str(p).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def _unit_uniform(*parts) -> float:
    return _hash_int(*parts) / 2**64


@lru_cache(maxsize=200_000)
def _token_vector(seed: int, dim: int, token: str) -> np.ndarray:
    v = np.random.default_rng(_hash_int(seed, token)).standard_normal(dim)
    v.setflags(write=False)
    return v


def stub_embedding(text: str, seed: int, dim: int) -> np.ndarray:
    """Unit vector: normalized sum of per-token pseudo-random vectors.

    Texts sharing vocabulary land near each other, which keeps stub runs
    learnable; the result is a pure function of (text, seed, dim).
    """
    tokens = re.findall(r"\w+", text.lower()) or [text]
    acc = np.zeros(dim)
    for tok in tokens:
        acc += _token_vector(seed, dim, tok)
    norm = np.linalg.norm(acc)
    if norm == 0.0:
        acc = _token_vector(seed, dim, "\x00" + text).copy()
        norm = np.linalg.norm(acc)
    return acc / norm


_FUNC_TARGET = re.compile(r"^(.+?): (.+)\nfunction:\s*$", re.MULTILINE)
_SUMMARY_VIEW = re.compile(r"generate a behavior summary for the given Android application in (.+?)\.\n")
_SUMMARY_LIST = re.compile(r"^\s*1\.[12]- ([^:\n]+): (\[.*\])\s*$", re.MULTILINE)
_PACKAGE = re.compile(r'package name "(.*?)"')
_VERDICT = re.compile(r"classified as (\w+) by the classifier")
_REPORT_SUMMARY = re.compile(r"^\s*2\.(\d)\.3- <(.+?)>: (.*)$", re.MULTILINE)
_NO_PHASE_VIEW = re.compile(r"you get the (.+?)'s contents of the application")
_NO_PHASE_LIST = re.compile(r"^\s*1\.[12]- ([^:\n]+): (\[.*\])\s*$", re.MULTILINE)
_NO_VIEW_LIST = re.compile(r"^\s*1\.(\d)\.(\d)- <(.+?)>: (\[.*\])\s*$", re.MULTILINE)

_SUBTYPE_BY_LABEL = {s.label: s for s in FeatureSubtype}
_VIEW_REPORT_HEADINGS = ("Permission View", "API View", "URL & uses-feature View")


def _capability(name: str) -> str:
    return f"provides capability {name}"


def _names_in_lists(text: str, pattern: re.Pattern, label_group: int, list_group: int) -> list[tuple[str, list]]:
    out = []
    for m in pattern.finditer(text):
        label = m.group(label_group).strip()
        st = _SUBTYPE_BY_LABEL.get(label, FeatureSubtype.URL)
        try:
            pairs = FunctionDescriptionList.parse(st, m.group(list_group)).pairs
        except ValueError:
            continue
        out.append((label, list(pairs)))
    return out


class StubProvider:
    """Deterministic offline provider.

    Replies follow a fixed grammar per prompt kind: function prompts get
    ``provides capability <feature>``; summary prompts a paragraph with the
    sorted feature names; report prompts a fixed skeleton. JSON-producing
    alternative workflows emit malformed JSON for a hash-selected fraction
    ``malformed_rate`` of prompts.
    """

    name = "stub"

    def __init__(self, seed: int = 0, dim: int = 64, malformed_rate: float = 0.0, latency_per_token: float = 0.001):
        self.seed = seed
        self.dim = dim
        self.malformed_rate = malformed_rate
        self.latency_per_token = latency_per_token

    @classmethod
    def from_config(cls, cfg: ProviderConfig) -> StubProvider:
        return cls(cfg.stub_seed, cfg.stub_dim, cfg.stub_malformed_rate, cfg.stub_latency_per_token)

    @staticmethod
    def count_tokens(text: str) -> int:
        return len(text.split())

    def chat(self, prompt: RenderedPrompt) -> _ProviderResult:
        reply = self.reply_for(prompt)
        p, r = self.count_tokens(prompt.text), self.count_tokens(reply)
        return _ProviderResult(text=reply, prompt_tokens=p, response_tokens=r,
                               elapsed=self.latency_per_token * (p + r))

    def embed(self, texts: list[str]) -> _ProviderResult:
        vecs = [stub_embedding(t, self.seed, self.dim) for t in texts]
        p = sum(self.count_tokens(t) for t in texts)
        return _ProviderResult(vectors=vecs, prompt_tokens=p, elapsed=self.latency_per_token * p)

    # -- reply grammar -------------------------------------------------------

    def _malformed(self, text: str) -> bool:
        return self.malformed_rate > 0 and _unit_uniform(self.seed, "malformed", text) < self.malformed_rate

    def reply_for(self, prompt: RenderedPrompt) -> str:
        text = prompt.text
        kind = Purpose(prompt.purpose)
        if kind in (Purpose.FUNCTION_DESCRIPTION, Purpose.ALT_NO_VIEW_DESCRIPTION):
            matches = _FUNC_TARGET.findall(text)
            if not matches:
                raise MalformedProviderReply("stub could not find the target feature")
            return _capability(matches[-1][1].strip())
        if kind is Purpose.VIEW_SUMMARY:
            view = _SUMMARY_VIEW.search(text)
            view_label = view.group(1) if view else "this view"
            names = sorted({n for _, pairs in _names_in_lists(text, _SUMMARY_LIST, 1, 2) for n, _ in pairs})
            return self._summary_paragraph(view_label, names)
        if kind is Purpose.DIAGNOSTIC_REPORT:
            return self._report(text)
        if kind is Purpose.ALT_NO_PHASE:
            return self._no_phase(text)
        if kind is Purpose.ALT_NO_VIEW_SUMMARY:
            return self._no_view_summary(text)
        raise MalformedProviderReply(f"stub has no grammar for {kind}")

    @staticmethod
    def _summary_paragraph(view_label: str, names: list[str]) -> str:
        if not names:
            return f"The application has no information about the {view_label}."
        return (
            f"Within the {view_label}, the application exposes {len(names)} observed features: "
            + ", ".join(names)
            + "."
        )

    def _report(self, text: str) -> str:
        pkg = _PACKAGE.search(text)
        verdict = _VERDICT.search(text)
        summaries = {int(m.group(1)): m.group(3).strip() for m in _REPORT_SUMMARY.finditer(text)}
        pkg_name = pkg.group(1) if pkg else "unknown"
        lines = [
            f'Diagnostic Report: Analysis of "{pkg_name}" Application',
            f"Verdict: classified as {verdict.group(1) if verdict else 'unknown'} by the classifier.",
            "",
            "Summary of Potential Risks:",
        ]
        for i, heading in enumerate(_VIEW_REPORT_HEADINGS, 1):
            lines.append(f"{i}. {heading}: {summaries.get(i, 'no information available.')}")
        lines += [
            "",
            "Detailed Guidance for Further Detection:",
            "1. Code Review: inspect the code paths that use the features listed above.",
            "2. Network Traffic Analysis: monitor traffic to the observed hosts.",
            "3. Behavioral Analysis: run the application in a controlled environment.",
        ]
        return "\n".join(lines)

    def _no_phase(self, text: str) -> str:
        view = _NO_PHASE_VIEW.search(text)
        view_label = view.group(1) if view else "View"
        descs = {}
        all_names = []
        for m in _NO_PHASE_LIST.finditer(text):
            names = json.loads(m.group(2))
            descs[m.group(1).strip()] = {n: _capability(n) for n in names}
            all_names += names
        doc = {view_label: {"Function description": descs,
                            "View summary": self._summary_paragraph(view_label, sorted(set(all_names)))}}
        return self._maybe_break(text, json.dumps(doc, ensure_ascii=False))

    def _no_view_summary(self, text: str) -> str:
        by_view: dict[int, list[str]] = {}
        for m in _NO_VIEW_LIST.finditer(text):
            st = _SUBTYPE_BY_LABEL.get(m.group(3))
            pairs = FunctionDescriptionList.parse(st, m.group(4)).pairs if st else ()
            by_view.setdefault(int(m.group(1)), []).extend(n for n, _ in pairs)
        keys = ("Permission View Summary", "API View Summary", "URL & uses-feature View Summary")
        doc = {
            key: self._summary_paragraph(heading, sorted(set(by_view.get(i, []))))
            for i, (key, heading) in enumerate(zip(keys, _VIEW_REPORT_HEADINGS), 1)
        }
        return self._maybe_break(text, json.dumps(doc, ensure_ascii=False))

    def _maybe_break(self, text: str, good: str) -> str:
        if not self._malformed(text):
            return good
        # the two failure shapes seen in practice: fenced output and truncation
        if _hash_int(self.seed, "shape", text) % 2:
            return "```json\n" + good + "\n```"
        return good[: max(1, len(good) // 2)]


# ----------------------------------------------------------------------------
# HTTP provider


class HttpProvider:
    name = "http"

    def __init__(self, cfg: ProviderConfig, transport: httpx.BaseTransport | None = None, clock=time.perf_counter):
        self.cfg = cfg
        self.clock = clock
        token = os.environ.get(cfg.api_key_env, "")
        headers = {"Authorization": f"Bearer {token}"} if token else {}
        self._client = httpx.Client(
            base_url=cfg.endpoint.rstrip("/"), timeout=cfg.timeout, headers=headers, transport=transport
        )

    def _post(self, path: str, payload: dict) -> dict:
        try:
            resp = self._client.post(path, json=payload)
        except httpx.TimeoutException as exc:
            raise ProviderTimeout(f"{path}: {exc}") from exc
        except httpx.TransportError as exc:
            raise ProviderConnectionError(f"{path}: {exc}") from exc
        if resp.status_code >= 400:
            raise HttpStatus(resp.status_code, resp.text)
        try:
            return resp.json()
        except ValueError as exc:
            raise MalformedProviderReply(f"{path}: body is not JSON") from exc

    def chat(self, prompt: RenderedPrompt) -> _ProviderResult:
        t0 = self.clock()
        data = self._post("/chat/completions", {
            "model": self.cfg.model_name,
            "messages": [{"role": "user", "content": prompt.text}],
            "temperature": self.cfg.temperature,
        })
        try:
            content = data["choices"][0]["message"]["content"]
            usage = data.get("usage") or {}
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedProviderReply(f"unexpected chat reply shape: {str(data)[:200]}") from exc
        if not isinstance(content, str):
            raise MalformedProviderReply("chat reply content is not text")
        return _ProviderResult(
            text=content,
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            response_tokens=int(usage.get("completion_tokens", 0)),
            elapsed=self.clock() - t0,
        )

    def embed(self, texts: list[str]) -> _ProviderResult:
        t0 = self.clock()
        data = self._post("/embeddings", {"model": self.cfg.embed_model_name, "input": list(texts)})
        try:
            items = sorted(data["data"], key=lambda d: d["index"])
            vecs = [np.asarray(d["embedding"], dtype=np.float64) for d in items]
            usage = data.get("usage") or {}
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedProviderReply(f"unexpected embedding reply shape: {str(data)[:200]}") from exc
        return _ProviderResult(vectors=vecs, prompt_tokens=int(usage.get("prompt_tokens", 0)),
                               elapsed=self.clock() - t0)

    def close(self):
        self._client.close()


# ----------------------------------------------------------------------------
# gateway


class Gateway:
    """Retrying, concurrency-bounded front for one provider with call accounting."""

    def __init__(self, cfg: ProviderConfig, provider=None, sleep=time.sleep):
        self.cfg = cfg
        if provider is None:
            provider = StubProvider.from_config(cfg) if cfg.provider == "stub" else HttpProvider(cfg)
        self.provider = provider
        self.sleep = sleep
        self._slots = threading.BoundedSemaphore(cfg.concurrency)
        self._lock = threading.Lock()
        self.calls: list[CallRecord] = []

    @property
    def dim(self) -> int:
        return self.cfg.dim

    def _attempt(self, fn):
        attempts = self.cfg.max_retries + 1
        last: GatewayError | None = None
        calls = 0
        for attempt in range(attempts):
            calls += 1
            try:
                with self._slots:
                    return fn(), calls
            except GatewayError as exc:
                if not exc.retryable:
                    raise
                last = exc
                if attempt + 1 < attempts:
                    delay = self.cfg.backoff(attempt)
                    log.warning("provider call failed (%s); retry %d in %.1fs", exc, attempt + 1, delay)
                    self.sleep(delay)
        raise Exhausted(attempts, last)

    def _record(self, phase: str, purpose: str, usage: UsageStats):
        with self._lock:
            self.calls.append(CallRecord(phase, purpose, usage))

    def complete(self, prompt: RenderedPrompt, phase: str | None = None) -> tuple[str, UsageStats]:
        if not prompt.text.strip():
            raise ValueError("prompt is empty")
        res, calls = self._attempt(lambda: self.provider.chat(prompt))
        if not res.text.strip():
            raise MalformedProviderReply("provider returned an empty reply")
        usage = UsageStats(res.prompt_tokens, res.response_tokens, res.elapsed, calls)
        self._record(phase or Purpose(prompt.purpose).value, Purpose(prompt.purpose).value, usage)
        return res.text, usage

    def embed(self, texts: list[str], phase: str = "embedding_detection") -> list[np.ndarray]:
        texts = list(texts)
        if not texts or any(not t for t in texts):
            raise ValueError("embed needs a non-empty list of non-empty texts")
        res, calls = self._attempt(lambda: self.provider.embed(texts))
        vecs = res.vectors
        if len(vecs) != len(texts):
            raise MalformedProviderReply(f"asked for {len(texts)} embeddings, got {len(vecs)}")
        dims = {v.shape[0] for v in vecs}
        if len(dims) != 1 or not all(np.all(np.isfinite(v)) for v in vecs):
            raise MalformedProviderReply("embedding vectors are ragged or non-finite")
        self._record(phase, "embedding", UsageStats(res.prompt_tokens, 0, res.elapsed, calls))
        return vecs

    def usage(self, phase: str | None = None) -> UsageStats:
        with self._lock:
            records = list(self.calls)
        total = UsageStats()
        for rec in records:
            if phase is None or rec.phase == phase:
                total = total + rec.usage
        return total

    def with_config(self, **changes) -> Gateway:
        return Gateway(replace(self.cfg, **changes), sleep=self.sleep)
