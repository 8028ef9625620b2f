from __future__ import annotations

import json

import pytest
from click.testing import CliRunner
from conftest import write_synthetic_manifest

from apkscope.cli import main
from apkscope.pipeline import write_manifest


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def config(tmp_path):
    p = tmp_path / "config.json"
    p.write_text(json.dumps({
        "provider": {"stub_dim": 16, "retry_backoff": [0]},
        "classifier": {"hidden_layers": [32, 16], "learning_rate": 0.05, "epochs": 30},
        "seeds": {"split": 0, "init": 0, "stub": 0},
    }))
    return str(p)


def _invoke(runner, *args):
    return runner.invoke(main, [str(a) for a in args], catch_exceptions=False)


def test_stage_by_stage(runner, tmp_path, config):
    manifest = write_synthetic_manifest(tmp_path, 20)
    wd = tmp_path / "w"
    r = _invoke(runner, "extract", manifest, "-w", wd, "--config", config, "--from-features")
    assert r.exit_code == 0 and "20 ok" in r.output
    for verb in ("generate", "vectorize", "train", "eval", "report", "run-summary"):
        r = _invoke(runner, verb, "-w", wd, "--config", config)
        assert r.exit_code == 0, (verb, r.output)
    assert (wd / "metrics.tsv").exists()
    assert len(list((wd / "reports").glob("*.txt"))) == 20
    r = _invoke(runner, "repr", "dump", "--apk", "app00000", "-w", wd)
    assert r.output.splitlines()[0] == "slot\tdim\tl2_norm\tmin\tmax\tall_zero"
    assert len(r.output.splitlines()) == 7


def test_run_with_broken_apk_exits_partial(runner, tmp_path, fixtures_dir, config):
    write_manifest(tmp_path / "m.tsv", [
        ("tiny", str(fixtures_dir / "tiny.apk"), "benign"),
        ("junk", str(fixtures_dir / "not_an_apk.txt"), "malicious"),
    ])
    r = runner.invoke(main, ["extract", str(tmp_path / "m.tsv"), "-w", str(tmp_path / "w"), "--config", config])
    assert r.exit_code == 3
    assert "1 ok, 1 failed" in r.output
    assert "junk\tNotZip" in (tmp_path / "w" / "errors.tsv").read_text()


def test_full_run_and_ablation(runner, tmp_path, config):
    manifest = write_synthetic_manifest(tmp_path, 20)
    wd = tmp_path / "w"
    r = _invoke(runner, "run", manifest, "-w", wd, "--config", config, "--from-features")
    assert r.exit_code == 0, r.output
    assert "ACC\t" in r.output
    _invoke(runner, "train", "-w", wd, "--config", config, "--ablate", "noapi")
    r = _invoke(runner, "eval", "-w", wd, "--config", config, "--ablate", "noapi")
    assert r.exit_code == 0
    assert (wd / "metrics.noapi.tsv").exists()


def test_bad_ablation_rejected(runner, tmp_path):
    r = runner.invoke(main, ["eval", "-w", str(tmp_path), "--ablate", "noeverything"])
    assert r.exit_code == 2


def test_no_memory_and_workflow_flags(runner, tmp_path, config):
    manifest = write_synthetic_manifest(tmp_path, 6)
    wd = tmp_path / "w"
    _invoke(runner, "extract", manifest, "-w", wd, "--config", config, "--from-features")
    r = _invoke(runner, "generate", "-w", wd, "--config", config, "--no-memory", "--workflow", "no_view")
    assert r.exit_code == 0
    assert json.loads((wd / "workflow.json").read_text())["workflow"] == "no_view"
    assert not (wd / "memory.jsonl").exists()


def test_empty_manifest(runner, tmp_path, config):
    write_manifest(tmp_path / "m.tsv", [])
    r = _invoke(runner, "extract", tmp_path / "m.tsv", "-w", tmp_path / "w", "--config", config)
    assert r.exit_code == 0 and "0 ok, 0 failed" in r.output


def test_detect(runner, tmp_path, fixtures_dir, config):
    manifest = write_synthetic_manifest(tmp_path, 20)
    wd = tmp_path / "w"
    _invoke(runner, "run", manifest, "-w", wd, "--config", config, "--from-features")
    r = _invoke(runner, "detect", fixtures_dir / "tiny.apk", "-w", wd, "--config", config)
    assert r.exit_code == 0
    assert "tiny" in r.output
    assert (wd / "reports" / "tiny.txt").exists()


def test_memory_export_import(runner, tmp_path, config):
    manifest = write_synthetic_manifest(tmp_path, 6)
    wd = tmp_path / "w"
    _invoke(runner, "extract", manifest, "-w", wd, "--config", config, "--from-features")
    _invoke(runner, "generate", "-w", wd, "--config", config)
    r = _invoke(runner, "memory", "export", tmp_path / "dump.jsonl", "-w", wd)
    n = int(r.output.split()[1])
    assert n > 0
    r = _invoke(runner, "memory", "import", tmp_path / "dump.jsonl", "-w", tmp_path / "fresh")
    assert f"imported {n} new entries" in r.output
    first = json.loads((tmp_path / "dump.jsonl").read_text().splitlines()[0])
    first["function_text"] = "something else"
    (tmp_path / "conflict.jsonl").write_text(json.dumps(first) + "\n")
    r = runner.invoke(main, ["memory", "import", str(tmp_path / "conflict.jsonl"), "-w", str(wd)])
    assert r.exit_code == 1 and "--force" in r.output
    r = _invoke(runner, "memory", "import", tmp_path / "conflict.jsonl", "-w", wd, "--force")
    assert "replaced 1" in r.output


def test_parse_verb(runner, fixtures_dir):
    r = _invoke(runner, "parse", fixtures_dir / "tiny.apk")
    doc = json.loads(r.output)
    assert doc["manifest"]["package_name"] == "com.example.tiny"
    r = runner.invoke(main, ["parse", str(fixtures_dir / "not_an_apk.txt")])
    assert r.exit_code == 1


def test_synth_verb(runner, tmp_path):
    r = _invoke(runner, "synth", tmp_path / "c", "--n", 10, "--seed", 2)
    assert r.exit_code == 0
    assert len((tmp_path / "c" / "manifest.tsv").read_text().splitlines()) == 11


def test_missing_model_is_clean_error(runner, tmp_path, config):
    r = runner.invoke(main, ["report", "-w", str(tmp_path / "nothing"), "--config", config])
    assert r.exit_code == 1
    assert "missing input" in r.output and "vectors.bin" in r.output
