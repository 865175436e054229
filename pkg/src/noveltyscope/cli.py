"""Operator commands: build-db, generate, validate, evaluate, cross-validate.

Each target paper gets one run directory (corpus/, indexes/, reports/,
validation/, eval/, transcripts/) so every stage leaves an auditable trail.
Stage failures map to distinct exit codes:

    2  usage or config problems
    3  corpus construction / missing inputs
    4  provider unavailable or budget exceeded
    5  malformed model output (after retries)
    6  report structure violations
    7  evaluation errors
"""

from __future__ import annotations

import dataclasses
import functools
import json
import logging
import re
import sys
from dataclasses import dataclass
from pathlib import Path

import click

from .config import RunConfig, load_config
from .corpus import (
    INGEST_RESOLVED,
    Document,
    HttpScholarlyProvider,
    OfflineDirProvider,
    UrlTextSource,
    fetch_reference_set,
    load_documents,
    load_manifest,
    rank_and_truncate,
    resolve_full_texts,
    save_documents,
    save_manifest,
)
from .errors import (
    BudgetExceeded,
    CapacityTooSmall,
    ConfigError,
    DimensionMismatch,
    EmptyAnswers,
    EmptyCorpus,
    EmptyDocument,
    IncompleteMatrix,
    MalformedOutput,
    MissingClassAnnotations,
    MissingDimension,
    NoveltyScopeError,
    ProviderUnavailable,
    StructureViolation,
    TargetNotFound,
)
from .evaluation import (
    compute_faithfulness_metrics,
    cross_validate,
    evaluate_report,
    load_checklist,
    load_score_matrix,
)
from .gateway import HttpGateway, ReplayGateway, TranscriptWriter
from .generation import generate_report
from .ingest import chunk_corpus, clean_text, load_chunks, save_chunks
from .report import load_report, save_report
from .retrieval import (
    SparseIndex,
    embed_chunks,
    load_dense_index,
    load_sparse_index,
    save_dense_index,
    save_sparse_index,
)
from .validation import load_artifacts, validate_report

logger = logging.getLogger(__name__)

EXIT_USAGE = 2
EXIT_CORPUS = 3
EXIT_PROVIDER = 4
EXIT_MALFORMED = 5
EXIT_STRUCTURE = 6
EXIT_EVALUATION = 7

_EXIT_MAP = (
    ((ConfigError,), EXIT_USAGE),
    ((TargetNotFound, CapacityTooSmall, EmptyCorpus, EmptyDocument), EXIT_CORPUS),
    ((ProviderUnavailable, BudgetExceeded), EXIT_PROVIDER),
    ((MalformedOutput,), EXIT_MALFORMED),
    ((StructureViolation,), EXIT_STRUCTURE),
    ((EmptyAnswers, MissingDimension, MissingClassAnnotations,
      IncompleteMatrix, DimensionMismatch), EXIT_EVALUATION),
)


def _exit_code(error: NoveltyScopeError) -> int:
    for types, code in _EXIT_MAP:
        if isinstance(error, types):
            return code
    return 1


def _stage(func):
    """Convert pipeline errors into messages + the mapped exit code."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except NoveltyScopeError as error:
            click.echo(f"error: {error}", err=True)
            sys.exit(_exit_code(error))

    return wrapper


def _slug(text: str) -> str:
    cleaned = re.sub(r"[^A-Za-z0-9._-]+", "-", text).strip("-._")
    return cleaned.lower() or "target"


@dataclass
class RunPaths:
    root: Path

    @property
    def corpus(self) -> Path:
        return self.root / "corpus"

    @property
    def indexes(self) -> Path:
        return self.root / "indexes"

    @property
    def reports(self) -> Path:
        return self.root / "reports"

    @property
    def validation(self) -> Path:
        return self.root / "validation"

    @property
    def eval(self) -> Path:
        return self.root / "eval"

    @property
    def transcripts(self) -> Path:
        return self.root / "transcripts"

    def ensure(self) -> None:
        for directory in (self.corpus, self.indexes, self.reports,
                          self.validation, self.eval, self.transcripts):
            directory.mkdir(parents=True, exist_ok=True)


@dataclass
class AppState:
    config: RunConfig
    mock_transcript: str | None = None

    def paths_for(self, target: str) -> RunPaths:
        return RunPaths(Path(self.config.run_dir) / _slug(target))

    def existing_paths(self, target: str) -> RunPaths:
        paths = self.paths_for(target)
        if not (paths.corpus / "manifest.json").is_file():
            raise EmptyCorpus(
                f"no built corpus for {target!r} under {paths.root} "
                f"(run build-db first)"
            )
        return paths

    def chat_gateway(self, paths: RunPaths, command: str):
        paths.transcripts.mkdir(parents=True, exist_ok=True)
        writer = TranscriptWriter(paths.transcripts / f"{command}.jsonl")
        if self.mock_transcript:
            return ReplayGateway(self.mock_transcript, transcript=writer)
        if not self.config.gateway.chat_endpoint:
            raise ConfigError(
                "no chat endpoint configured; set [gateway].chat_endpoint "
                "or pass --mock-transcript"
            )
        return HttpGateway(self.config.gateway, transcript=writer)

    def embedder_and_reranker(self):
        gw = self.config.gateway
        if self.mock_transcript or not gw.embed_endpoint:
            # Deterministic offline providers; keeps mock runs replayable.
            from .testing import OverlapReranker, StubEmbedder
            if not self.mock_transcript:
                logger.warning("no embed endpoint configured; using the "
                               "deterministic stub embedder")
            return StubEmbedder(), OverlapReranker()
        http = HttpGateway(gw)
        return http, (http if gw.rerank_endpoint else None)


@click.group(name="noveltyscope")
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="TOML config file (defaults apply when omitted).")
@click.option("--offline-dir", default=None,
              help="Local paper directory used instead of the live provider.")
@click.option("--capacity", type=int, default=None,
              help="Override the reference-set capacity.")
@click.option("--k-final", type=int, default=None,
              help="Override reranked chunks kept per query.")
@click.option("--mock-transcript", type=click.Path(), default=None,
              help="Replay chat responses from a recorded transcript.")
@click.option("--fail-closed", is_flag=True, default=False,
              help="Treat missing verification verdicts as errors.")
@click.pass_context
def main(ctx: click.Context, config_path, offline_dir, capacity, k_final,
         mock_transcript, fail_closed) -> None:
    """Evidence-grounded novelty reports for academic papers."""
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(config_path) if config_path else RunConfig()
    except ConfigError as error:
        raise click.UsageError(str(error))
    overrides = {}
    if offline_dir is not None:
        overrides["offline_dir"] = offline_dir
    if capacity is not None:
        overrides["capacity"] = capacity
    if k_final is not None:
        overrides["k_final"] = k_final
    if fail_closed:
        overrides["fail_closed"] = True
    if overrides:
        config = dataclasses.replace(config, **overrides)
    ctx.obj = AppState(config=config, mock_transcript=mock_transcript)


def _providers(config: RunConfig):
    """(metadata provider, text source) per the configured mode."""
    if config.offline_dir:
        offline = OfflineDirProvider(config.offline_dir)
        return offline, offline
    if config.scholarly_endpoint:
        return HttpScholarlyProvider(config.scholarly_endpoint), UrlTextSource()
    raise ConfigError("configure offline_dir or scholarly_endpoint")


@main.command("build-db")
@click.argument("target")
@click.pass_obj
@_stage
def cmd_build_db(state: AppState, target: str) -> None:
    """Build the reference corpus and indexes for TARGET (title or id)."""
    config = state.config
    provider, text_source = _providers(config)
    target_meta = provider.resolve(target)
    first, second = fetch_reference_set(target_meta, provider)
    manifest = rank_and_truncate(first, second, config.capacity,
                                 target_id=target_meta.id)
    documents = resolve_full_texts(manifest, text_source)

    target_doc = Document(meta=target_meta)
    raw = text_source.get_text(target_meta)
    if raw and raw.strip():
        target_doc.raw_text = raw
        target_doc.cleaned_text = clean_text(raw)
        if target_doc.cleaned_text.strip():
            target_doc.ingest_status = INGEST_RESOLVED

    paths = state.paths_for(target_meta.id)
    paths.ensure()
    save_manifest(manifest, paths.corpus / "manifest.json")
    save_documents(documents, paths.corpus / "documents")
    save_documents([target_doc], paths.corpus / "target")

    chunks = chunk_corpus(documents, config.chunk_tokens)
    if not chunks:
        raise EmptyCorpus(
            f"no resolvable full texts among {len(manifest.entries)} references"
        )
    save_chunks(chunks, paths.indexes / "chunks.jsonl")
    sparse = SparseIndex(chunks, k1=config.bm25_k1, b=config.bm25_b)
    save_sparse_index(sparse, paths.indexes / "sparse.json")
    embedder, _ = state.embedder_and_reranker()
    dense = embed_chunks(chunks, embedder)
    save_dense_index(dense, paths.indexes / "dense.f32",
                     paths.indexes / "dense.json")

    resolved = sum(1 for d in documents if d.resolved)
    click.echo(f"corpus {target_meta.id}: {len(first)} first-order + "
               f"{len(manifest.entries) - len(first)} second-order references "
               f"(capacity {config.capacity})")
    click.echo(f"resolved texts: {resolved}/{len(documents)}; "
               f"target text: {'yes' if target_doc.resolved else 'MISSING'}")
    click.echo(f"indexed {len(chunks)} chunks "
               f"({dense.dim}-dim dense, BM25 sparse) under {paths.root}")


def _load_indexes(state: AppState, paths: RunPaths):
    chunks = load_chunks(paths.indexes / "chunks.jsonl")
    sparse = load_sparse_index(paths.indexes / "sparse.json")
    embedder, reranker = state.embedder_and_reranker()
    dense = load_dense_index(paths.indexes / "dense.f32",
                             paths.indexes / "dense.json", embedder)
    return chunks, sparse, dense, reranker


@main.command("generate")
@click.argument("target")
@click.pass_obj
@_stage
def cmd_generate(state: AppState, target: str) -> None:
    """Generate the novelty report for a built corpus."""
    config = state.config
    paths = state.existing_paths(target)
    manifest = load_manifest(paths.corpus / "manifest.json")
    target_docs = load_documents(paths.corpus / "target")
    if not target_docs:
        raise EmptyDocument(f"no stored target document under {paths.corpus}")
    chunks, sparse, dense, reranker = _load_indexes(state, paths)
    gateway = state.chat_gateway(paths, "generate")

    run = generate_report(target_docs[0], manifest, chunks, sparse, dense,
                          reranker, gateway, config)
    save_report(run.report, paths.reports)
    artifacts = {
        "points": [
            {"index": p.index, "classification": p.classification,
             "description": p.description}
            for p in run.points
        ],
        "queries": {str(qs.point_index): list(qs.queries)
                    for qs in run.query_sets},
        "retrieval": {
            str(index): [
                {"query": ctx.query, "chunks": ctx.provenance,
                 "rerank_fallback": ctx.rerank_fallback}
                for ctx in contexts
            ]
            for index, contexts in run.contexts.items()
        },
    }
    (paths.reports / "generation.json").write_text(
        json.dumps(artifacts, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )
    click.echo(f"report for {run.report.target_id}: {len(run.points)} novelty "
               f"points, score {run.report.score}, "
               f"{len(run.report.references)} references")
    click.echo(f"wrote {paths.reports / 'report.md'}")


@main.command("validate")
@click.argument("target")
@click.pass_obj
@_stage
def cmd_validate(state: AppState, target: str) -> None:
    """Run citation self-validation over the generated report."""
    config = state.config
    paths = state.existing_paths(target)
    report_path = paths.reports / "report.json"
    if not report_path.is_file():
        raise EmptyDocument(f"no generated report at {report_path}")
    report = load_report(report_path)
    manifest = load_manifest(paths.corpus / "manifest.json")
    documents = {d.meta.id: d
                 for d in load_documents(paths.corpus / "documents")}
    gateway = state.chat_gateway(paths, "validate")

    final, artifacts = validate_report(report, documents, manifest, gateway,
                                       config)
    save_report(final, paths.validation, stem="validated")
    artifacts.save(paths.validation)
    click.echo(f"validated {final.target_id}: {len(artifacts.claims)} claims, "
               f"{artifacts.incorrect_count} incorrect"
               + (", polish fell back" if artifacts.polish_fallback else ""))
    click.echo(f"wrote {paths.validation / 'validated.md'}")


@main.command("evaluate")
@click.argument("target")
@click.pass_obj
@_stage
def cmd_evaluate(state: AppState, target: str) -> None:
    """Score a report against the 69-item checklist."""
    config = state.config
    paths = state.existing_paths(target)
    validated = paths.validation / "validated.json"
    report_path = validated if validated.is_file() else paths.reports / "report.json"
    if not report_path.is_file():
        raise EmptyDocument(f"no report to evaluate under {paths.root}")
    report = load_report(report_path)
    manifest = load_manifest(paths.corpus / "manifest.json")
    name_of = {meta.id: meta.display_name for meta in manifest.entries}
    chunks, sparse, dense, reranker = _load_indexes(state, paths)
    chunk_of = {chunk.chunk_id: chunk for chunk in chunks}
    gateway = state.chat_gateway(paths, "evaluate")

    result = evaluate_report(report, name_of, gateway, config,
                             sparse=sparse, dense=dense, chunks_by_id=chunk_of,
                             reranker=reranker)
    paths.eval.mkdir(parents=True, exist_ok=True)
    result.save(paths.eval / "evaluation.json")
    for name, score in result.dimensions.items():
        click.echo(f"{name:14s} {score.score:5.2f}  "
                   f"({score.yes_count}/{score.total} yes)")
    click.echo(f"{'Overall':14s} {result.overall:5.2f}")

    artifacts_path = paths.validation / "validation.json"
    if artifacts_path.is_file():
        artifacts = load_artifacts(artifacts_path)
        items = load_checklist().for_dimension("Faithfulness")
        metrics = compute_faithfulness_metrics(items,
                                               result.faithfulness_answers,
                                               artifacts.verdicts)
        payload = {"tf": metrics.tf, "cf": metrics.cf, "ca": metrics.ca,
                   "no_citations": metrics.no_citations}
        (paths.eval / "faithfulness.json").write_text(
            json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        click.echo(f"TF {metrics.tf:.2f}  CF {metrics.cf:.2f}  "
                   f"CA {metrics.ca:.2f}"
                   + ("  (no citations)" if metrics.no_citations else ""))
    else:
        click.echo("no validation artifacts; skipping TF/CF/CA")


@main.command("cross-validate")
@click.argument("matrix_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--strategy", type=click.Choice(["leave_one_out", "all_models"]),
              default="leave_one_out", show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Also write the MAE/MSE table to this JSON file.")
@_stage
def cmd_cross_validate(matrix_file: str, strategy: str,
                       out_path: str | None) -> None:
    """Per-model MAE/MSE against the consensus proxy ground truth."""
    matrix = load_score_matrix(matrix_file)
    results = cross_validate(matrix, strategy)
    table = {"strategy": strategy, "papers": len(matrix.papers),
             "models": results}
    rendered = json.dumps(table, indent=2) + "\n"
    if out_path:
        Path(out_path).write_text(rendered, encoding="utf-8")
    click.echo(rendered, nl=False)


if __name__ == "__main__":
    main()
