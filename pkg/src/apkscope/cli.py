"""``apkscope`` command line: one verb per pipeline stage, file handoffs through a work directory."""

from __future__ import annotations

import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import pipeline as pl
from .errors import ApkScopeError, ConflictingEntry
from .ingest import load_apk, open_archive, parse_dex, parse_manifest
from .representation import SLOT_NAMES, read_vectors

EXIT_PARTIAL = 3


def _load_config(path) -> pl.PipelineConfig:
    return pl.PipelineConfig.load(path) if path else pl.PipelineConfig()


def _finish(res: pl.StageResult, what: str):
    click.echo(f"{what}: {len(res.ok)} ok, {len(res.errors)} failed")
    if res.partial:
        for aid, etype, msg in res.errors:
            click.echo(f"  {aid}: {etype}: {msg}", err=True)
        sys.exit(EXIT_PARTIAL)


config_opt = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                          help="Pipeline config (JSON).")
workdir_opt = click.option("--workdir", "-w", type=click.Path(file_okay=False), default="apkscope-run",
                           show_default=True, help="Directory holding stage outputs.")


@click.group()
@click.option("-v", "--verbose", count=True, help="Repeat for more logging.")
@click.pass_context
def main(ctx, verbose):
    """Static APK features -> LLM descriptions and summaries -> embeddings -> MLP verdict and report."""
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _wrap(fn):
    """Turn library errors into clean CLI failures."""
    import functools

    @functools.wraps(fn)
    def inner(*a, **kw):
        try:
            return fn(*a, **kw)
        except ApkScopeError as exc:
            raise click.ClickException(f"{type(exc).__name__}: {exc}") from exc
        except FileNotFoundError as exc:
            raise click.ClickException(f"missing input {exc.filename} (run the earlier stages first?)") from exc

    return inner


@main.command()
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@workdir_opt
@config_opt
@click.option("--from-features", is_flag=True, help="Manifest paths point at feature JSON, not APKs.")
@click.option("--strict", is_flag=True, help="Verify DEX checksums.")
@click.option("--dump-json", is_flag=True, help="Also write parsed manifest/dex models to parsed/.")
@_wrap
def extract(manifest, workdir, config_path, from_features, strict, dump_json):
    """Parse APKs (or load feature JSON) into per-app view bundles."""
    cfg = _load_config(config_path)
    if strict:
        cfg = replace(cfg, strict_dex=True)
    rows = pl.read_manifest(manifest)
    if dump_json and not from_features:
        out = pl.Workdir(workdir).sub("parsed")
        for row in rows:
            if row.path.suffix == ".json":
                continue
            try:
                m, d = load_apk(row.path, strict=cfg.strict_dex)
            except ApkScopeError:
                continue  # reported by the extract pass below
            doc = {"manifest": m.to_json(), "dex": d.to_json()}
            (out / f"{row.apk_id}.json").write_text(json.dumps(doc, indent=1, ensure_ascii=False) + "\n", "utf-8")
    _finish(pl.extract_stage(rows, workdir, cfg, from_features), "extract")


@main.command()
@workdir_opt
@config_opt
@click.option("--no-memory", is_flag=True, help="Disable the function memory for this run.")
@click.option("--workflow", type=click.Choice(pl.WORKFLOWS), default=None, help="Prompt workflow.")
@_wrap
def generate(workdir, config_path, no_memory, workflow):
    """Function descriptions and view summaries for every extracted app."""
    cfg = _load_config(config_path)
    res = pl.generate_stage(workdir, cfg, memory_enabled=False if no_memory else None, workflow=workflow)
    stats = json.loads((Path(workdir) / "workflow.json").read_text())
    click.echo("\t".join(f"{k}={v}" for k, v in sorted(stats.items())))
    _finish(res, "generate")


@main.command()
@workdir_opt
@config_opt
@_wrap
def vectorize(workdir, config_path):
    """Embed the six texts per app into the slot-layout vector file."""
    _finish(pl.vectorize_stage(workdir, _load_config(config_path)), "vectorize")


ablate_opt = click.option("--ablate", type=click.Choice(sorted(pl.ABLATION_MODES)), default=None,
                          help="Zero the slots of one ablation mode.")


@main.command()
@workdir_opt
@config_opt
@ablate_opt
@_wrap
def train(workdir, config_path, ablate):
    """Train the MLP on the training split of vectors.bin."""
    model = pl.train_stage(workdir, _load_config(config_path), ablate)
    first, last = model.history[0][1], model.history[-1][1]
    click.echo(f"trained {model.n_params} parameters; loss {first:.4f} -> {last:.4f}")


@main.command("eval")
@workdir_opt
@config_opt
@ablate_opt
@_wrap
def eval_cmd(workdir, config_path, ablate):
    """Evaluate on the test split; writes metrics TSV and a confusion-matrix PNG."""
    name = "metrics" if not ablate else f"metrics.{ablate}"
    report = pl.eval_stage(workdir, _load_config(config_path), ablate, name)
    for k, v in report.as_rows():
        click.echo(f"{k}\t{v}")


@main.command()
@workdir_opt
@config_opt
@_wrap
def report(workdir, config_path):
    """Diagnostic report per vectorized app, verdict from the trained model."""
    _finish(pl.report_stage(workdir, _load_config(config_path)), "report")


@main.command()
@click.argument("source", type=click.Path(exists=True, dir_okay=False))
@workdir_opt
@config_opt
@click.option("--apk-id", default=None, help="Identifier for outputs (default: file stem).")
@_wrap
def detect(source, workdir, config_path, apk_id):
    """Classify one APK (or feature JSON) with an existing model and write its report."""
    det = pl.detect(source, workdir, _load_config(config_path), apk_id)
    click.echo(f"{det.apk_id}\t{det.label}\t{det.score:.6f}\t{det.report_path}")


@main.command("run-summary")
@workdir_opt
@config_opt
@_wrap
def run_summary(workdir, config_path):
    """Per-phase cost table (TSV) and figure from the stage accounting files."""
    cfg = _load_config(config_path) if config_path else None
    click.echo(pl.run_summary_stage(workdir, cfg), nl=False)


@main.command()
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@workdir_opt
@config_opt
@click.option("--from-features", is_flag=True)
@click.option("--no-memory", is_flag=True)
@_wrap
def run(manifest, workdir, config_path, from_features, no_memory):
    """All stages in order: extract, generate, vectorize, train, eval, report, run-summary."""
    cfg = _load_config(config_path)
    partial = False
    for name, res in (
        ("extract", lambda: pl.extract_stage(pl.read_manifest(manifest), workdir, cfg, from_features)),
        ("generate", lambda: pl.generate_stage(workdir, cfg, memory_enabled=False if no_memory else None)),
        ("vectorize", lambda: pl.vectorize_stage(workdir, cfg)),
    ):
        r = res()
        click.echo(f"{name}: {len(r.ok)} ok, {len(r.errors)} failed")
        partial |= r.partial
    pl.train_stage(workdir, cfg)
    for k, v in pl.eval_stage(workdir, cfg).as_rows():
        click.echo(f"{k}\t{v}")
    r = pl.report_stage(workdir, cfg)
    partial |= r.partial
    pl.run_summary_stage(workdir, cfg)
    if partial:
        sys.exit(EXIT_PARTIAL)


# ----------------------------------------------------------------------------
# memory admin


@main.group()
def memory():
    """Function-memory export and import."""


@memory.command("export")
@click.argument("dest", type=click.Path(dir_okay=False))
@workdir_opt
@config_opt
@_wrap
def memory_export(dest, workdir, config_path):
    cfg = _load_config(config_path)
    mem = pl.make_memory(cfg, pl.Workdir(workdir), enabled=True)
    click.echo(f"exported {mem.export(dest)} entries")


@memory.command("import")
@click.argument("src", type=click.Path(exists=True, dir_okay=False))
@workdir_opt
@config_opt
@click.option("--force", is_flag=True, help="Replace conflicting descriptions instead of failing.")
def memory_import(src, workdir, config_path, force):
    cfg = _load_config(config_path)
    mem = pl.make_memory(cfg, pl.Workdir(workdir), enabled=True)
    try:
        added, replaced = mem.import_(src, force=force)
    except ConflictingEntry as exc:
        raise click.ClickException(f"{exc} (use --force to overwrite)") from exc
    click.echo(f"imported {added} new entries, replaced {replaced}")


# ----------------------------------------------------------------------------
# inspection


@main.group("repr")
def repr_group():
    """Inspect representation vectors."""


@repr_group.command("dump")
@click.option("--apk", "apk_id", required=True)
@workdir_opt
@click.option("--full", is_flag=True, help="Print every value, not only per-slot statistics.")
@_wrap
def repr_dump(apk_id, workdir, full):
    vs = read_vectors(pl.Workdir(workdir).vectors)
    if apk_id not in vs.apk_ids:
        raise click.ClickException(f"{apk_id} not in vector file")
    row = vs.row(apk_id)
    click.echo("slot\tdim\tl2_norm\tmin\tmax\tall_zero")
    for slot in SLOT_NAMES:
        v = row[vs.layout.span(slot)]
        click.echo(f"{slot}\t{v.size}\t{np.linalg.norm(v):.6f}\t{v.min():.6f}\t{v.max():.6f}\t{int(not v.any())}")
    if full:
        click.echo(" ".join(f"{x:.6g}" for x in row))


@main.command()
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
@click.option("--strict", is_flag=True)
@_wrap
def parse(path, strict):
    """Dump the parsed model of an APK, AndroidManifest (binary or text) or .dex as JSON."""
    data = Path(path).read_bytes()
    if data[:4] == b"PK\x03\x04":
        m, d = load_apk(path, strict=strict)
        doc = {"entries": [e for e in open_archive(path).entries], "manifest": m.to_json(), "dex": d.to_json()}
    elif data[:4] == b"dex\n":
        doc = parse_dex(data, strict=strict).to_json()
    else:
        doc = parse_manifest(data).to_json()
    click.echo(json.dumps(doc, indent=1, ensure_ascii=False))


@main.command()
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--n", "n_apps", default=40, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--malicious-fraction", default=0.5, show_default=True)
def synth(out_dir, n_apps, seed, malicious_fraction):
    """Write a synthetic feature-JSON corpus plus manifest.tsv (for offline runs)."""
    from .synthetic import synthetic_corpus

    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    rows = []
    for app, label in synthetic_corpus(n_apps, seed, malicious_fraction):
        (out / "features" / f"{app.apk_id}.json").write_text(app.dumps(), "utf-8")
        rows.append((app.apk_id, f"features/{app.apk_id}.json", label))
    pl.write_manifest(out / "manifest.tsv", rows)
    click.echo(f"wrote {len(rows)} apps to {out / 'manifest.tsv'}")


if __name__ == "__main__":
    main()
