"""Pipeline stages that turn a corpus plus target paper into a novelty report.

Stage order: paper summary -> novelty point extraction -> per-point query
generation, retrieval, and comparative analysis (parallel across points) ->
novelty summary -> report assembly with citation rewriting.

Every LLM-output parser is line-oriented and tolerant, with exactly one retry
carrying a corrective instruction; a second failure raises MalformedOutput.
"""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .config import RunConfig, STOP_PHRASES, STOP_WORDS
from .corpus import CorpusManifest, Document
from .errors import EmptyDocument, MalformedOutput
from .gateway import ChatGateway, truncate_tokens
from .ingest import Chunk
from .report import (
    CLASSIFICATIONS,
    NO_POINTS_SUMMARY,
    CitationRewriter,
    NoveltyPoint,
    PointAnalysis,
    Report,
)
from .retrieval import (
    DenseIndex,
    RerankProvider,
    RetrievedContext,
    SparseIndex,
    merge_contexts,
    retrieve_for_queries,
)
from .templates import load_prompt

logger = logging.getLogger(__name__)

NO_SIMILARITIES_SENTENCE = (
    "Based on the retrieved related texts, no explicit similarities with "
    "existing work were identified."
)
NO_DIFFERENCES_SENTENCE = (
    "Based on the retrieved related texts, no unique differences were "
    "identified for this novelty point."
)
SENTINEL_NO_CLAIMS = "No explicit innovation claims identified."


@dataclass(frozen=True)
class QuerySet:
    point_index: int
    queries: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.queries) != 6:
            raise ValueError(f"expected 6 queries, got {len(self.queries)}")


def _chat_with_retry(gateway: ChatGateway, stage: str, system: str | None,
                     user: str, parse, corrective: str):
    """Run parse over the response; on failure, retry once with a corrective
    instruction appended to the user prompt."""
    response = gateway.chat(stage, user, system)
    try:
        return parse(response)
    except MalformedOutput as first_error:
        logger.warning("stage %s output malformed (%s); retrying once",
                       stage, first_error)
    response = gateway.chat(stage, user + "\n\n" + corrective, system)
    return parse(response)


def summarize_paper(target: Document, gateway: ChatGateway,
                    config: RunConfig) -> str:
    if not target.resolved:
        raise EmptyDocument(f"target {target.meta.id} has no resolved text")
    template = load_prompt("paper_summary")
    system, user = template.fill(
        paper_name=target.meta.display_name,
        paper_text=truncate_tokens(target.cleaned_text,
                                   config.gateway.context_budget_tokens),
    )

    def parse(response: str) -> str:
        text = response.strip()
        if not text:
            raise MalformedOutput("empty summary")
        if "\n\n" in text:
            raise MalformedOutput("summary is not a single paragraph")
        return text

    return _chat_with_retry(
        gateway, "paper_summary", system, user, parse,
        "REMINDER: Output exactly one paragraph, with no blank lines.",
    )


_ITEM_START_RE = re.compile(r"^\s*(\d+)[.)]\s+(.*)$")
_CLASSIFICATION_RE = re.compile(r"\(Classification:\s*([^)]+)\)")


def _parse_points(response: str) -> list[NoveltyPoint]:
    text = response.strip()
    if not text:
        raise MalformedOutput("empty extraction output")
    if SENTINEL_NO_CLAIMS in text.splitlines()[0]:
        return []
    items: list[str] = []
    current: list[str] | None = None
    for line in text.splitlines():
        match = _ITEM_START_RE.match(line)
        if match:
            if current is not None:
                items.append("\n".join(current).strip())
            current = [match.group(2)]
        elif current is not None:
            current.append(line)
    if current is not None:
        items.append("\n".join(current).strip())
    if not items:
        raise MalformedOutput("no numbered innovation items found")
    points = []
    for ordinal, item in enumerate(items, start=1):
        cls_match = _CLASSIFICATION_RE.search(item)
        if cls_match is None:
            raise MalformedOutput(f"item {ordinal} lacks a classification tag")
        classification = cls_match.group(1).strip()
        matched = next(
            (c for c in CLASSIFICATIONS
             if c.casefold() == classification.casefold()),
            None,
        )
        if matched is None:
            raise MalformedOutput(
                f"item {ordinal} has unknown classification {classification!r}"
            )
        points.append(NoveltyPoint(index=ordinal, classification=matched,
                                   description=item))
    return points


def extract_novelty_points(target: Document, gateway: ChatGateway,
                           config: RunConfig) -> list[NoveltyPoint]:
    if not target.resolved:
        raise EmptyDocument(f"target {target.meta.id} has no resolved text")
    template = load_prompt("point_extraction")
    system, user = template.fill(
        paper_name=target.meta.display_name,
        paper_text=truncate_tokens(target.cleaned_text,
                                   config.gateway.context_budget_tokens),
    )

    max_points = config.max_points

    def parse_strict(response: str) -> list[NoveltyPoint]:
        points = _parse_points(response)
        if len(points) > max_points:
            raise MalformedOutput(f"{len(points)} points exceed cap {max_points}")
        return points

    response = gateway.chat("point_extraction", user, system)
    try:
        return parse_strict(response)
    except MalformedOutput as error:
        logger.warning("point extraction malformed (%s); retrying once", error)
    response = gateway.chat(
        "point_extraction",
        user + f"\n\nREMINDER: Output a plain numbered list of AT MOST "
        f"{max_points} innovations, or exactly: {SENTINEL_NO_CLAIMS}",
        system,
    )
    # After the retry the cap is enforced by truncation rather than rejection.
    return _parse_points(response)[:max_points]


_QUERY_LINE_RE = re.compile(r"^\s*([1-9])[.)]\s*(.+?)\s*$")


def _screen_query(line: str) -> str | None:
    """Returns the violated stop term, or None when the line is clean."""
    lowered = line.lower()
    for phrase in STOP_PHRASES:
        if phrase in lowered:
            return phrase
    for word in STOP_WORDS:
        if re.search(rf"\b{word}\b", lowered):
            return word
    return None


def _parse_queries(response: str) -> list[str]:
    lines = []
    for line in response.strip().splitlines():
        match = _QUERY_LINE_RE.match(line)
        if match:
            lines.append(match.group(2))
    if len(lines) != 6:
        raise MalformedOutput(f"expected 6 query lines, got {len(lines)}")
    for line in lines:
        violation = _screen_query(line)
        if violation is not None:
            raise MalformedOutput(
                f"query {line!r} contains forbidden term {violation!r}"
            )
    return lines


def generate_queries(point: NoveltyPoint, paper_name: str,
                     gateway: ChatGateway, config: RunConfig) -> QuerySet:
    template = load_prompt("query_generation")
    system, user = template.fill(
        paper_name=paper_name,
        point_num=str(point.index),
        innovation_point=point.description,
    )
    queries = _chat_with_retry(
        gateway, "query_generation", system, user, _parse_queries,
        "REMINDER: Output exactly 6 numbered query lines and avoid all "
        "forbidden meta-language, question words, pronouns, and abstract "
        "adjectives listed above.",
    )
    return QuerySet(point_index=point.index, queries=tuple(queries))


def format_knowledge(chunks: list[tuple], name_of: dict[str, str]) -> str:
    """Renders retrieved chunks as the analyst's knowledge base."""
    if not chunks:
        return "(no related texts were retrieved for this novelty point)"
    blocks = []
    for _, chunk in chunks:
        name = name_of.get(chunk.doc_id, chunk.doc_id)
        blocks.append(f"Source Document: {name}\nContent: {chunk.text}")
    return "\n\n".join(blocks)


_SUBSECTION_MARK_RE = re.compile(
    r"(?:\*\*|#+\s*)?\b([a-d])\)\s*"
    r"(Claimed novelty|Similarities|Unique Differences|"
    r"Details of Unique Differences)\s*:?(?:\*\*)?",
    re.IGNORECASE,
)


def _parse_analysis(response: str, point: NoveltyPoint) -> PointAnalysis:
    marks: dict[str, tuple[int, int]] = {}
    for match in _SUBSECTION_MARK_RE.finditer(response):
        letter = match.group(1).lower()
        if letter not in marks:
            marks[letter] = (match.start(), match.end())
    missing = [letter for letter in "abc" if letter not in marks]
    if missing:
        raise MalformedOutput(f"analysis lacks subsections {missing}")

    ordered = sorted(marks.items(), key=lambda kv: kv[1][0])
    texts: dict[str, str] = {}
    for i, (letter, (_, body_start)) in enumerate(ordered):
        body_end = ordered[i + 1][1][0] if i + 1 < len(ordered) else len(response)
        texts[letter] = response[body_start:body_end].strip()

    claimed = texts["a"]
    # The renderer re-emits the classification line, so drop a leading echo.
    claimed = re.sub(
        rf"^Classification:\s*{re.escape(point.classification)}\.?\s*",
        "", claimed,
    ).strip()
    if not claimed:
        raise MalformedOutput("empty claimed-novelty subsection")

    details = texts.get("d", "").strip() or None
    if NO_DIFFERENCES_SENTENCE in texts["c"]:
        details = None  # d only accompanies genuine uniqueness
    return PointAnalysis(
        point=point,
        claimed_novelty=claimed,
        similarities=texts["b"],
        unique_differences=texts["c"],
        details=details,
    )


def analyze_point(point: NoveltyPoint, context: list[tuple],
                  paper_name: str, name_of: dict[str, str],
                  gateway: ChatGateway, config: RunConfig) -> PointAnalysis:
    template = load_prompt("point_comparison")
    system, user = template.fill(
        knowledge=format_knowledge(context, name_of),
        paper_name=paper_name,
        point_num=str(point.index),
        innovation_point=point.description,
    )
    return _chat_with_retry(
        gateway, "point_comparison", system, user,
        lambda response: _parse_analysis(response, point),
        "REMINDER: Structure the output with the labeled parts "
        "'a) Claimed novelty:', 'b) Similarities:', 'c) Unique Differences:' "
        "and, only when genuine uniqueness was identified, "
        "'d) Details of Unique Differences:'.",
    )


def draft_section_2(analyses: list[PointAnalysis]) -> str:
    """Section-2 draft (raw citation markers intact) fed to the Summarizer."""
    parts = []
    for analysis in analyses:
        i = analysis.point.index
        parts.append(f"### 2.{i}. Novelty Point {i}")
        parts.append(f"**a. Claimed novelty:** Classification: "
                     f"{analysis.point.classification}")
        parts.append(analysis.claimed_novelty)
        parts.append("**b. Similarities:**")
        parts.append(analysis.similarities)
        parts.append("**c. Unique Differences:**")
        parts.append(analysis.unique_differences)
        if analysis.details is not None:
            parts.append("**d. Details of Unique Differences:**")
            parts.append(analysis.details)
        parts.append("")
    return "\n".join(parts).strip()


_SCORE_LINE_RE = re.compile(r"Final One-line Summary:\*?\*?\s*([0-9]+)\s*[–—-]")


def summarize_novelty(analyses: list[PointAnalysis],
                      gateway: ChatGateway) -> tuple[str, int]:
    if not analyses:
        return NO_POINTS_SUMMARY, 1
    template = load_prompt("novelty_summary")
    system, user = template.fill(draft_section2=draft_section_2(analyses))

    def parse(response: str) -> tuple[str, int]:
        text = response.strip()
        text = re.sub(r"^##\s*3\.\s*Novelty Summary\s*\n+", "", text)
        match = _SCORE_LINE_RE.search(text)
        if match is None:
            raise MalformedOutput("no Final One-line Summary score found")
        score = int(match.group(1))
        if score not in (1, 2, 3, 4):
            raise MalformedOutput(f"score {score} outside 1..4")
        return text, score

    return _chat_with_retry(
        gateway, "novelty_summary", system, user, parse,
        "REMINDER: End with a line of the form "
        "'Final One-line Summary: S – Label: ...' where S is an integer "
        "from 1 to 4.",
    )


def assemble_report(target_id: str, content_summary: str,
                    analyses: list[PointAnalysis], novelty: tuple[str, int],
                    manifest: CorpusManifest) -> Report:
    known: dict[str, str] = {}
    for meta in manifest.entries:
        known[meta.display_name] = meta.display_name
        known[meta.id] = meta.display_name
    rewriter = CitationRewriter(known)

    summary_text, _ = rewriter.rewrite(content_summary)
    rewritten_analyses = []
    for analysis in analyses:
        claimed, cites_a = rewriter.rewrite(analysis.claimed_novelty)
        similar, cites_b = rewriter.rewrite(analysis.similarities)
        unique, cites_c = rewriter.rewrite(analysis.unique_differences)
        cites_d: list[tuple[str, str]] = []
        details = None
        if analysis.details is not None:
            details, cites_d = rewriter.rewrite(analysis.details)
        rewritten_analyses.append(PointAnalysis(
            point=analysis.point,
            claimed_novelty=claimed,
            similarities=similar,
            unique_differences=unique,
            details=details,
            citations=cites_a + cites_b + cites_c + cites_d,
        ))
    novelty_text, _ = rewriter.rewrite(novelty[0])

    return Report(
        target_id=target_id,
        content_summary=summary_text,
        analyses=rewritten_analyses,
        novelty_summary=novelty_text,
        score=novelty[1],
        references=list(rewriter.references),
    )


@dataclass
class GenerationRun:
    report: Report
    points: list[NoveltyPoint]
    query_sets: list[QuerySet]
    contexts: dict[int, list[RetrievedContext]]


def generate_report(target: Document, manifest: CorpusManifest,
                    chunks: list[Chunk], sparse: SparseIndex,
                    dense: DenseIndex, reranker: RerankProvider | None,
                    gateway: ChatGateway, config: RunConfig) -> GenerationRun:
    """Full generation pipeline over a built corpus."""
    paper_name = target.meta.display_name
    name_of = {meta.id: meta.display_name for meta in manifest.entries}
    chunk_of = {chunk.chunk_id: chunk for chunk in chunks}

    content_summary = summarize_paper(target, gateway, config)
    points = extract_novelty_points(target, gateway, config)

    query_sets: list[QuerySet] = []
    contexts: dict[int, list[RetrievedContext]] = {}
    analyses: list[PointAnalysis] = []
    if points:

        def run_point(point: NoveltyPoint):
            queries = generate_queries(point, paper_name, gateway, config)
            retrieved = retrieve_for_queries(
                list(queries.queries), sparse, dense, chunk_of, reranker,
                n_recall=config.n_recall, weight=config.fusion_weight,
                k_final=config.k_final, rerank_fallback=config.rerank_fallback,
            )
            merged = merge_contexts(
                retrieved, cap=config.queries_per_point * config.k_final
            )
            analysis = analyze_point(point, merged, paper_name, name_of,
                                     gateway, config)
            return queries, retrieved, analysis

        max_workers = max(1, config.gateway.max_in_flight)
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(run_point, points))
        for point, (queries, retrieved, analysis) in zip(points, results):
            query_sets.append(queries)
            contexts[point.index] = retrieved
            analyses.append(analysis)

    novelty = summarize_novelty(analyses, gateway)
    report = assemble_report(target.meta.id, content_summary, analyses,
                             novelty, manifest)
    return GenerationRun(report=report, points=points, query_sets=query_sets,
                         contexts=contexts)
