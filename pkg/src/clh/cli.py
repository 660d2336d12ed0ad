"""``clh`` command-line entry point.

Exit codes: 0 success, 1 bad input data or nothing to evaluate, 2 bad
usage or configuration, 3 the model backend was unreachable for every note.
"""

from __future__ import annotations

import csv
import json
import logging
import sys
from pathlib import Path
from typing import Any

import click

from clh import __version__
from clh.backend import RecordingBackend
from clh.config import EngineConfig, load_config, make_backend, make_embedder
from clh.errors import ClhError, ConfigError, EmptyInput
from clh.experiments import (
    AblationArm,
    CodeCorpus,
    ExperimentResult,
    candidate_scaling_run,
    context_ablation_run,
    decoding_mode_run,
)
from clh.io import RunManifest, atomic_writer, dumps, open_text, read_jsonl, write_json
from clh.metrics import REPORT_SCHEMA, chapter_recall, micro_macro, stage_eval
from clh.pipeline import ClinicalNote, Coder, CodingRun
from clh.retrieval import TermIndex
from clh.taxonomy import Taxonomy, load_alpha_index, load_guidelines, load_tabular, load_taxonomy

logger = logging.getLogger("clh")

DATA_FILES = ("tabular", "alpha_index", "guidelines", "notes")
SYSTEMIC = {"BackendUnavailable", "BackendTimeout"}


class Failure(click.ClickException):
    def __init__(self, message: str, code: int = 1) -> None:
        super().__init__(message)
        self.exit_code = code


# shared option groups


def data_options(fn):
    for name in reversed(DATA_FILES):
        flag = "--" + name.replace("_", "-")
        fn = click.option(flag, name, type=click.Path(path_type=Path), default=None, help=f"{name}.jsonl path")(fn)
    return click.option(
        "--data-dir",
        type=click.Path(file_okay=False, path_type=Path),
        default=None,
        help="Directory holding tabular/alpha_index/guidelines/notes .jsonl files.",
    )(fn)


def backend_options(fn):
    fn = click.option("--backend", type=click.Choice(["oracle", "scripted", "http"]), default=None)(fn)
    fn = click.option("--decoding", type=click.Choice(["thinking", "constrained"]), default=None)(fn)
    fn = click.option("--script", type=click.Path(path_type=Path), default=None, help="Scripted answer table.")(fn)
    fn = click.option(
        "--record", type=click.Path(path_type=Path), default=None, help="Save every model answer as a script."
    )(fn)
    return fn


def _data_overrides(data_dir: Path | None, paths: dict[str, Path | None]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for name in DATA_FILES:
        value = paths.get(name)
        if value is None and data_dir is not None and (data_dir / f"{name}.jsonl").exists():
            value = data_dir / f"{name}.jsonl"
        out[f"data.{name}"] = str(value) if value is not None else None
    return out


def _config(ctx: click.Context, overrides: dict[str, Any]) -> EngineConfig:
    try:
        return load_config(ctx.obj.get("config"), overrides)
    except ConfigError as exc:
        raise Failure(f"configuration error: {exc}", 2) from exc


def _require(cfg: EngineConfig, *names: str) -> None:
    missing = [n for n in names if getattr(cfg.data, n) is None]
    if missing:
        raise Failure(f"missing data file(s): {', '.join(missing)} (use --data-dir or --{missing[0].replace('_', '-')})", 2)


def _taxonomy(cfg: EngineConfig) -> Taxonomy:
    _require(cfg, "tabular")
    d = cfg.data
    guidelines = d.guidelines if d.guidelines and d.guidelines.exists() else None
    if d.guidelines and guidelines is None:
        click.echo(f"warning: guidelines file {d.guidelines} not found; guideline context will be empty", err=True)
    try:
        return load_taxonomy(d.tabular, d.alpha_index, guidelines)
    except (ClhError, OSError) as exc:
        raise Failure(f"cannot load taxonomy: {exc}") from exc


def _notes(cfg: EngineConfig) -> list[ClinicalNote]:
    _require(cfg, "notes")
    try:
        return [ClinicalNote.from_record(r) for r in read_jsonl(cfg.data.notes)]
    except (ClhError, OSError) as exc:
        raise Failure(f"cannot load notes: {exc}") from exc


def _index(cfg: EngineConfig, taxonomy: Taxonomy, snapshot: Path | None = None) -> TermIndex:
    embedder = make_embedder(cfg)
    if snapshot is not None:
        try:
            return TermIndex.load(snapshot, embedder)
        except ClhError as exc:
            raise Failure(str(exc)) from exc
    if not taxonomy.alpha_index:
        raise Failure("no alphabetical index loaded; pass --alpha-index", 2)
    return TermIndex.build(taxonomy.alpha_index, embedder, cfg.retrieval_params())


def _manifest(cfg: EngineConfig, extra: dict[str, Path | None] | None = None) -> RunManifest:
    paths: dict[str, Any] = {n: getattr(cfg.data, n) for n in DATA_FILES}
    if cfg.backend.kind == "scripted":
        paths["script"] = cfg.backend.script
    paths.update(extra or {})
    return RunManifest.for_inputs(cfg.hash, paths)


def _backend(cfg: EngineConfig, record: Path | None):
    try:
        backend = make_backend(cfg)
    except ConfigError as exc:
        raise Failure(f"configuration error: {exc}", 2) from exc
    return RecordingBackend(backend) if record else backend


def _save_recording(backend, record: Path | None) -> None:
    if record and isinstance(backend, RecordingBackend):
        backend.scripted().save(record)
        click.echo(f"recorded {len(backend.answers)} answers to {record}", err=True)


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path), default=None)
@click.option("-v", "--verbose", count=True, help="-v for info, -vv for debug logging.")
@click.version_option(__version__, prog_name="clh")
@click.pass_context
def main(ctx: click.Context, config_path: Path | None, verbose: int) -> None:
    """Agentic ICD-10-CM coding: analyze, locate, assign, verify."""
    level = logging.WARNING if verbose == 0 else logging.INFO if verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    ctx.ensure_object(dict)
    ctx.obj["config"] = config_path


# ingest


@main.command()
@data_options
@click.pass_context
def ingest(ctx: click.Context, data_dir: Path | None, **paths: Path | None) -> None:
    """Validate fixture files and print record counts."""
    cfg = _config(ctx, _data_overrides(data_dir, paths))
    d = cfg.data
    failed = False
    taxonomy = None
    loaders = {
        "tabular": lambda fh: load_tabular(fh),
        "alpha_index": lambda fh: load_alpha_index(fh),
        "guidelines": lambda fh: load_guidelines(fh),
    }
    results: dict[str, Any] = {}
    for name, loader in loaders.items():
        path = getattr(d, name)
        if path is None or not path.exists():
            if name == "guidelines":
                click.echo("guidelines: warning: no guidelines file; guideline context will be empty")
                continue
            click.echo(f"{name}: error: file {'not given' if path is None else f'{path} not found'}")
            failed = True
            continue
        try:
            with open_text(path) as fh:
                results[name] = loader(fh)
        except ClhError as exc:
            click.echo(f"{name}: error: {path}: {exc}")
            failed = True
    if "tabular" in results:
        taxonomy = results["tabular"]
        leaves = sum(1 for n in taxonomy.iter_nodes() if n.is_leaf and not n.is_block)
        click.echo(f"tabular: {len(taxonomy)} nodes, {leaves} assignable leaves")
    if "alpha_index" in results:
        entries = results["alpha_index"]
        click.echo(f"alpha_index: {len(entries)} entries")
        if taxonomy is not None:
            unknown = sorted({e.code.text for e in entries} - set(taxonomy.nodes))
            if unknown:
                click.echo(f"alpha_index: warning: {len(unknown)} codes not in tabular, first {unknown[0]}")
    if "guidelines" in results:
        docs = results["guidelines"]
        click.echo(f"guidelines: {len(docs)} chapter documents")
    if d.notes is not None:
        try:
            notes = [ClinicalNote.from_record(r) for r in read_jsonl(d.notes)]
            click.echo(f"notes: {len(notes)} notes, {sum(1 for n in notes if n.gold)} with gold codes")
        except (ClhError, OSError) as exc:
            click.echo(f"notes: error: {d.notes}: {exc}")
            failed = True
    if failed:
        raise Failure("ingest failed")


# index


@main.group()
def index() -> None:
    """Build or query the alphabetical-index term index."""


@index.command("build")
@data_options
@click.option("--out", type=click.Path(path_type=Path), required=True, help="Snapshot file to write.")
@click.pass_context
def index_build(ctx: click.Context, data_dir: Path | None, out: Path, **paths: Path | None) -> None:
    cfg = _config(ctx, _data_overrides(data_dir, paths))
    _require(cfg, "alpha_index")
    try:
        with open_text(cfg.data.alpha_index) as fh:
            entries = load_alpha_index(fh)
    except (ClhError, OSError) as exc:
        raise Failure(f"cannot load alphabetical index: {exc}") from exc
    idx = TermIndex.build(entries, make_embedder(cfg), cfg.retrieval_params())
    idx.save(out)
    _manifest(cfg).write(out.with_name(out.name + ".manifest.json"))
    click.echo(f"indexed {len(idx)} entries -> {out}")


@index.command("query")
@data_options
@click.option("--index", "snapshot", type=click.Path(exists=True, path_type=Path), default=None)
@click.option("-k", "--k", "k", type=int, default=None)
@click.option("--mode", type=click.Choice(["lexical", "dense", "hybrid"]), default=None)
@click.argument("query", nargs=-1, required=True)
@click.pass_context
def index_query(ctx, data_dir, snapshot, k, mode, query, **paths) -> None:
    """Print the top-k index entries for QUERY."""
    cfg = _config(ctx, {**_data_overrides(data_dir, paths), "retrieval.k": k, "retrieval.mode": mode})
    if snapshot is not None:
        idx = _index(cfg, Taxonomy(), snapshot)
    else:
        _require(cfg, "alpha_index")
        with open_text(cfg.data.alpha_index) as fh:
            idx = TermIndex.build(load_alpha_index(fh), make_embedder(cfg), cfg.retrieval_params())
    text = " ".join(query)
    for rank, (entry, score) in enumerate(idx.retrieve_terms(text, cfg.retrieval.k, cfg.retrieval.mode), start=1):
        click.echo(f"{rank:>3}  {score:.6f}  {entry.code.text:<8} {entry.display}")


# run


@main.command()
@data_options
@backend_options
@click.option("--out", type=click.Path(path_type=Path), default=Path("runs.jsonl"), show_default=True)
@click.option("--index", "snapshot", type=click.Path(exists=True, path_type=Path), default=None)
@click.option("-k", "--k", "k", type=int, default=None, help="Index entries retrieved per snippet.")
@click.option("--mode", type=click.Choice(["lexical", "dense", "hybrid"]), default=None)
@click.option("--passes", type=int, default=None, help="Self-refinement passes.")
@click.option("--context", type=click.Choice(["ids_only", "ids+descriptions", "ids+descriptions+guidelines"]), default=None)
@click.option("--gold-evidence/--no-gold-evidence", default=None, help="Use gold evidence spans as stage-1 output.")
@click.option("--workers", type=int, default=None, help="Notes coded concurrently.")
@click.pass_context
def run(ctx, data_dir, backend, decoding, script, record, out, snapshot, k, mode, passes, context, gold_evidence, workers, **paths):
    """Code every note and write one trace per line to runs.jsonl."""
    cfg = _config(
        ctx,
        {
            **_data_overrides(data_dir, paths),
            "backend.kind": backend,
            "backend.decoding": decoding,
            "backend.script": str(script) if script else None,
            "retrieval.k": k,
            "retrieval.mode": mode,
            "pipeline.passes": passes,
            "pipeline.context": context,
            "pipeline.use_gold_evidence": gold_evidence,
            "pipeline.workers": workers,
        },
    )
    taxonomy = _taxonomy(cfg)
    notes = _notes(cfg)
    idx = _index(cfg, taxonomy, snapshot)
    model = _backend(cfg, record)
    coder = Coder(taxonomy, idx, model, cfg.pipeline_config())
    manifest = _manifest(cfg, {"index": snapshot})
    runs = coder.run_batch(notes, cfg.pipeline.workers)
    with atomic_writer(out) as fh:
        for r in runs:
            fh.write(dumps(r.to_record(manifest.hash)) + "\n")
    manifest.write(out.with_name(out.name + ".manifest.json"))
    _save_recording(model, record)
    failed = [r for r in runs if r.errors]
    click.echo(f"coded {len(runs)} notes -> {out} ({len(failed)} with errors)", err=True)
    down = [r for r in runs if any(e["kind"] in SYSTEMIC for e in r.errors)]
    if runs and len(down) == len(runs):
        raise Failure("backend unreachable for every note", 3)


# eval


def _load_runs(path: Path) -> list[CodingRun]:
    try:
        return [CodingRun.from_record(r) for r in read_jsonl(path)]
    except (ClhError, OSError, KeyError) as exc:
        raise Failure(f"cannot load runs: {exc}") from exc


@main.command("eval")
@data_options
@click.option("--runs", "runs_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), default=Path("."), show_default=True)
@click.option("--stage-mode", type=click.Choice(["cumulative", "filtered"]), default="cumulative", show_default=True)
@click.option("--chapter-k", type=int, default=None, help="Also report per-chapter recall@k (needs the alpha index).")
@click.pass_context
def eval_cmd(ctx, data_dir, runs_path, out_dir, stage_mode, chapter_k, **paths):
    """Score runs.jsonl against gold codes; writes report.json and per_label.csv."""
    cfg = _config(ctx, _data_overrides(data_dir, paths))
    notes = {n.id: n for n in _notes(cfg)}
    runs = [r for r in _load_runs(runs_path) if r.note_id in notes and notes[r.note_id].gold is not None]
    gold = {r.note_id: notes[r.note_id].gold for r in runs}
    try:
        final = micro_macro({r.note_id: (r.final, gold[r.note_id]) for r in runs})
        stages = stage_eval(runs, gold, stage_mode)
    except EmptyInput as exc:
        raise Failure(f"nothing to evaluate: {exc}") from exc
    manifest = _manifest(cfg, {"runs": runs_path})
    report: dict[str, Any] = {
        "schema": REPORT_SCHEMA,
        "manifest": manifest.hash,
        "final": final.to_dict(),
        "stage_mode": stage_mode,
        "stages": {str(s): rep.to_dict() for s, rep in stages.items()},
    }
    if chapter_k:
        taxonomy = _taxonomy(cfg)
        cr = chapter_recall(runs, notes, _index(cfg, taxonomy), chapter_k)
        report["chapter_recall"] = {
            "k": cr.k,
            "skipped": cr.skipped,
            "chapters": {ch: {"agent": a, "evidence": e, "n": cr.counts[ch]} for ch, (a, e) in cr.points.items()},
        }
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "report.json", report)
    with atomic_writer(out_dir / "per_label.csv") as fh:
        fh.write(final.per_label_csv())
    manifest.write(out_dir / "report.manifest.json")
    click.echo(
        f"micro F1 {final.micro_f1:.4f}  macro F1 {final.macro_f1:.4f}  EMR {final.emr:.4f}  "
        f"({final.n_notes} notes) -> {out_dir / 'report.json'}"
    )


# experiments


def _parse_ks(value: str | None) -> list[int] | None:
    if value is None:
        return None
    try:
        ks = [int(v) for v in value.split(",") if v.strip()]
    except ValueError as exc:
        raise click.BadParameter(f"expected comma-separated integers, got {value!r}") from exc
    return ks


def experiment_options(fn):
    fn = data_options(fn)
    fn = backend_options(fn)
    fn = click.option("--K", "ks", default=None, help="Comma-separated negatives per gold code, e.g. 0,1,5.")(fn)
    fn = click.option("--grouping", type=click.Choice(["positive", "chapter"]), default=None)(fn)
    fn = click.option("--workers", type=int, default=None)(fn)
    fn = click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), default=Path("."), show_default=True)(fn)
    return fn


def _experiment(ctx, kind, data_dir, backend, decoding, script, record, ks, grouping, workers, out_dir, paths, extra=None):
    cfg = _config(
        ctx,
        {
            **_data_overrides(data_dir, paths),
            "backend.kind": backend,
            "backend.decoding": decoding,
            "backend.script": str(script) if script else None,
            "experiment.ks": _parse_ks(ks),
            "experiment.grouping": grouping,
            "pipeline.workers": workers,
            **(extra or {}),
        },
    )
    taxonomy = _taxonomy(cfg)
    notes = [n for n in _notes(cfg) if n.gold]
    if not notes:
        raise Failure("no notes with gold codes")
    embedder = make_embedder(cfg)
    corpus = CodeCorpus.from_taxonomy(taxonomy, embedder)
    idx = TermIndex.build(taxonomy.alpha_index, embedder, cfg.retrieval_params()) if taxonomy.alpha_index else None
    model = _backend(cfg, record)
    coder = Coder(taxonomy, idx, model, cfg.pipeline_config())
    ex = cfg.experiment
    w = cfg.pipeline.workers
    try:
        if kind == "candidate-scaling":
            result = candidate_scaling_run(coder, corpus, notes, ex.ks, ex.context, ex.grouping, w)
        elif kind == "context-ablation":
            arms = [AblationArm(level, cfg.backend.decoding, tuple(ex.ks)) for level in ex.arms]
            result = context_ablation_run(coder, corpus, notes, arms, ex.grouping, w)
        else:
            result = decoding_mode_run(coder, corpus, notes, ex.ks, ex.context, ex.grouping, w)
    except ClhError as exc:
        raise Failure(str(exc)) from exc
    _write_experiment(cfg, kind, result, out_dir)
    _save_recording(model, record)


def _write_experiment(cfg: EngineConfig, kind: str, result: ExperimentResult, out_dir: Path) -> None:
    manifest = _manifest(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    with atomic_writer(out_dir / "curves.csv") as fh:
        fh.write(result.curves_csv())
    write_json(
        out_dir / "arms.json",
        {
            "schema": "clh.arms/1",
            "experiment": kind,
            "manifest": manifest.hash,
            "arms": result.arms,
            "tallies": result.tallies,
            "reports": [
                {"arm": arm, "K": k, **rep.to_dict()} for (arm, k), rep in sorted(result.reports.items())
            ],
        },
    )
    manifest.write(out_dir / "manifest.json")
    click.echo(result.curves_csv(), nl=False)


@main.group()
def experiment() -> None:
    """Controlled sweeps of the assign and verify stages over hard negatives."""


@experiment.command("candidate-scaling")
@experiment_options
@click.option("--context", type=click.Choice(["ids_only", "ids+descriptions", "ids+descriptions+guidelines"]), default=None)
@click.pass_context
def exp_scaling(ctx, data_dir, backend, decoding, script, record, ks, grouping, workers, out_dir, context, **paths):
    """F1 of both stages as the number of negatives grows."""
    _experiment(ctx, "candidate-scaling", data_dir, backend, decoding, script, record, ks, grouping, workers, out_dir,
                paths, {"experiment.context": context})


@experiment.command("context-ablation")
@experiment_options
@click.option("--arms", default=None, help="Comma-separated context levels.")
@click.pass_context
def exp_context(ctx, data_dir, backend, decoding, script, record, ks, grouping, workers, out_dir, arms, **paths):
    """Validator F1 per context level."""
    arm_list = [a.strip() for a in arms.split(",")] if arms else None
    _experiment(ctx, "context-ablation", data_dir, backend, decoding, script, record, ks, grouping, workers, out_dir,
                paths, {"experiment.arms": arm_list})


@experiment.command("decoding")
@experiment_options
@click.option("--context", type=click.Choice(["ids_only", "ids+descriptions", "ids+descriptions+guidelines"]), default=None)
@click.pass_context
def exp_decoding(ctx, data_dir, backend, decoding, script, record, ks, grouping, workers, out_dir, context, **paths):
    """Validator F1 with thinking-enabled vs constrained decoding."""
    _experiment(ctx, "decoding", data_dir, backend, decoding, script, record, ks, grouping, workers, out_dir,
                paths, {"experiment.context": context})


# report


@main.command()
@click.argument("artifact", type=click.Path(exists=True, path_type=Path))
def report(artifact: Path) -> None:
    """Pretty-print a report.json or curves.csv."""
    if artifact.suffix == ".csv":
        with open(artifact, encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise Failure(f"{artifact} has no rows")
        click.echo(f"{'arm':<48} {'K':>3} {'micro F1':>9} {'macro F1':>9} {'notes':>6}")
        for r in rows:
            click.echo(
                f"{r['arm']:<48} {int(r['K']):>3} {float(r['micro_f1']):>9.4f} {float(r['macro_f1']):>9.4f} {int(r['n_notes']):>6}"
            )
        return
    try:
        data = json.loads(artifact.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise Failure(f"{artifact}: {exc}") from exc
    if data.get("schema") != REPORT_SCHEMA:
        raise Failure(f"{artifact}: not a {REPORT_SCHEMA} file")
    click.echo(f"{'':<8} {'micro F1':>9} {'macro F1':>9} {'EMR':>7} {'prec':>7} {'recall':>7}")
    rows = [("final", data["final"])] + [(f"stage {s}", r) for s, r in sorted(data.get("stages", {}).items())]
    for name, r in rows:
        click.echo(
            f"{name:<8} {r['micro_f1']:>9.4f} {r['macro_f1']:>9.4f} {r['emr']:>7.4f} {r['precision']:>7.4f} {r['recall']:>7.4f}"
        )
    cr = data.get("chapter_recall")
    if cr:
        click.echo(f"\nrecall@{cr['k']} by chapter (agent vs evidence):")
        for ch, p in cr["chapters"].items():
            click.echo(f"  {ch:<9} {p['agent']:.3f}  {p['evidence']:.3f}  (n={p['n']})")


if __name__ == "__main__":
    main()
