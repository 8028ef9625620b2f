from __future__ import annotations

import json
import sys
from pathlib import Path

import pytest

FIXTURES = Path(__file__).resolve().parent / "fixtures"
GOLDEN = FIXTURES / "golden"
sys.path.insert(0, str(FIXTURES))


def golden(name: str):
    return json.loads((GOLDEN / f"{name}.json").read_text("utf-8"))


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def fixture_meta() -> dict:
    return json.loads((FIXTURES / "fixtures.json").read_text("utf-8"))


def write_synthetic_manifest(root: Path, n: int, seed: int = 0) -> Path:
    """Feature-JSON corpus plus manifest.tsv under ``root``; returns the manifest path."""
    from apkscope.pipeline import write_manifest
    from apkscope.synthetic import synthetic_corpus

    feats = root / "features_src"
    feats.mkdir(parents=True, exist_ok=True)
    rows = []
    for app, label in synthetic_corpus(n, seed):
        (feats / f"{app.apk_id}.json").write_text(app.dumps(), "utf-8")
        rows.append((app.apk_id, f"features_src/{app.apk_id}.json", label))
    write_manifest(root / "manifest.tsv", rows)
    return root / "manifest.tsv"


def stub_config(**over):
    """Small, fast stub configuration that trains well on the synthetic corpus."""
    from apkscope.gateway import ProviderConfig
    from apkscope.pipeline import PipelineConfig

    provider = ProviderConfig(stub_dim=16, stub_malformed_rate=over.pop("malformed_rate", 0.0),
                              retry_backoff=(0.0,))
    classifier = {"hidden_layers": (32, 16), "learning_rate": 0.05, "epochs": 30}
    return PipelineConfig(provider=provider, classifier=classifier, **over)


def run_pipeline(root: Path, n: int = 40, seed: int = 0, **cfg_over):
    """extract -> generate -> vectorize -> train -> eval -> report on a synthetic corpus."""
    from apkscope import pipeline as pl

    cfg = stub_config(**cfg_over)
    manifest = write_synthetic_manifest(root, n, seed)
    wd = root / "work"
    pl.extract_stage(pl.read_manifest(manifest), wd, cfg, from_features=True)
    pl.generate_stage(wd, cfg)
    pl.vectorize_stage(wd, cfg)
    pl.train_stage(wd, cfg)
    metrics = pl.eval_stage(wd, cfg)
    pl.report_stage(wd, cfg)
    pl.run_summary_stage(wd, cfg)
    return wd, cfg, metrics
