"""Checklist evaluation: RAG-assisted yes/no grading, score aggregation,
faithfulness metrics, and proxy-ground-truth cross-validation.

The 69-item registry ships as a versioned JSON asset and is integrity-checked
on load. Scores are yes-proportions rescaled to 0-10; the overall score is the
unweighted mean of the five dimension scores (this reproduces every Overall
value in the published comparison table, see score_table.json).
"""

from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import RunConfig
from .errors import (
    ConfigError,
    EmptyAnswers,
    IncompleteMatrix,
    MalformedOutput,
    MissingClassAnnotations,
    MissingDimension,
)
from .gateway import ChatGateway, truncate_tokens
from .generation import _chat_with_retry, _parse_queries, format_knowledge
from .report import Report, render_report
from .retrieval import (
    DenseIndex,
    RerankProvider,
    SparseIndex,
    merge_contexts,
    retrieve_for_queries,
)
from .templates import load_prompt
from .validation import VerificationVerdict

logger = logging.getLogger(__name__)

DIMENSIONS = ("Fluency", "Effectiveness", "Completeness", "Faithfulness", "Depth")

EXPECTED_COUNTS = {
    "Fluency": 11,
    "Effectiveness": 13,
    "Completeness": 18,
    "Faithfulness": 14,
    "Depth": 13,
}


@dataclass(frozen=True)
class ChecklistItem:
    dimension: str
    group: str
    question: str
    needs_rag: bool
    faithfulness_class: str | None = None  # "target" | "cited", Faithfulness only

    def __post_init__(self) -> None:
        if self.dimension not in DIMENSIONS:
            raise ValueError(f"unknown dimension {self.dimension!r}")
        if self.faithfulness_class not in (None, "target", "cited"):
            raise ValueError(
                f"bad faithfulness_class {self.faithfulness_class!r}"
            )


@dataclass(frozen=True)
class Checklist:
    dimensions: dict  # name -> {"definition": str, "conditions": str}
    items: tuple[ChecklistItem, ...]

    def for_dimension(self, dimension: str) -> list[ChecklistItem]:
        return [item for item in self.items if item.dimension == dimension]


@dataclass
class DimensionScore:
    dimension: str
    yes_count: int
    total: int
    score: float

    def __post_init__(self) -> None:
        if self.total < 1 or self.yes_count < 0 or self.yes_count > self.total:
            raise ValueError("inconsistent yes_count/total")


@dataclass
class EvaluationResult:
    report_id: str
    dimensions: dict[str, DimensionScore]
    overall: float
    answers: list[dict] = field(default_factory=list)
    faithfulness_answers: list[bool] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "report_id": self.report_id,
                "dimensions": {
                    name: {
                        "yes_count": score.yes_count,
                        "total": score.total,
                        "score": score.score,
                    }
                    for name, score in self.dimensions.items()
                },
                "overall": self.overall,
                "answers": self.answers,
            },
            ensure_ascii=False,
            indent=2,
        ) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")


@dataclass
class FaithfulnessMetrics:
    tf: float
    cf: float
    ca: float
    no_citations: bool = False

    def __post_init__(self) -> None:
        for value in (self.tf, self.cf, self.ca):
            if not 0.0 <= value <= 100.0:
                raise ValueError(f"metric {value} outside [0, 100]")


@lru_cache(maxsize=None)
def load_checklist() -> Checklist:
    raw = (
        resources.files("noveltyscope")
        .joinpath("data")
        .joinpath("checklist.json")
        .read_text(encoding="utf-8")
    )
    payload = json.loads(raw)
    items = tuple(
        ChecklistItem(
            dimension=entry["dimension"],
            group=entry["group"],
            question=entry["question"],
            needs_rag=entry["needs_rag"],
            faithfulness_class=entry.get("faithfulness_class"),
        )
        for entry in payload["items"]
    )
    counts: dict[str, int] = {name: 0 for name in DIMENSIONS}
    for item in items:
        counts[item.dimension] += 1
    if len(items) != 69 or counts != EXPECTED_COUNTS:
        raise ConfigError(
            f"checklist registry corrupt: {len(items)} items, counts {counts}"
        )
    for item in items:
        has_class = item.faithfulness_class is not None
        if (item.dimension == "Faithfulness") != has_class:
            raise ConfigError(
                f"faithfulness_class misassigned on {item.question!r}"
            )
    return Checklist(dimensions=payload["dimensions"], items=items)


@lru_cache(maxsize=None)
def load_score_table() -> dict:
    raw = (
        resources.files("noveltyscope")
        .joinpath("data")
        .joinpath("score_table.json")
        .read_text(encoding="utf-8")
    )
    return json.loads(raw)


@lru_cache(maxsize=None)
def _report_template_text() -> str:
    return (
        resources.files("noveltyscope")
        .joinpath("data")
        .joinpath("report_template.txt")
        .read_text(encoding="utf-8")
    )


def _format_questions(items: Sequence[ChecklistItem]) -> str:
    return "\n".join(f"Q{i}: {item.question}" for i, item in enumerate(items, 1))


def generate_eval_queries(report: Report, dimension: str,
                          items: Sequence[ChecklistItem], checklist: Checklist,
                          gateway: ChatGateway, config: RunConfig) -> list[str]:
    """Retrieval queries for one RAG-backed dimension; exactly 6, screened."""
    rag_items = [item for item in items if item.needs_rag]
    if not rag_items:
        raise ValueError(f"dimension {dimension} has no RAG items")
    meta = checklist.dimensions[dimension]
    template = load_prompt("eval_query_generation")
    system, user = template.fill(
        dimension_name=dimension,
        dimension_description=meta["definition"],
        dimension_conditions=meta["conditions"] or "(none)",
        formatted_questions=_format_questions(rag_items),
        truncated_content=truncate_tokens(render_report(report),
                                          config.gateway.context_budget_tokens),
    )
    return _chat_with_retry(
        gateway, "eval_query_generation", system, user, _parse_queries,
        "REMINDER: Output exactly 6 numbered query lines and avoid all "
        "forbidden meta-language, question words, pronouns, and abstract "
        "adjectives listed above.",
    )


_ANSWER_LINE_RE = re.compile(r"^\s*Q(\d+)\s*[:.]\s*(.+?)\s*$", re.MULTILINE)


def _parse_answer_lines(response: str, n_items: int) -> dict[int, str]:
    found: dict[int, str] = {}
    for match in _ANSWER_LINE_RE.finditer(response):
        found[int(match.group(1))] = match.group(2)
    if set(found) != set(range(1, n_items + 1)):
        raise MalformedOutput(
            f"expected answers Q1..Q{n_items}, got {sorted(found)}"
        )
    return found


def _answer_value(raw: str) -> bool | None:
    cleaned = raw.strip().strip("[]*.").strip().lower()
    if cleaned == "yes":
        return True
    if cleaned == "no":
        return False
    return None


def answer_checklist(report: Report, dimension: str,
                     items: Sequence[ChecklistItem], checklist: Checklist,
                     article: str, gateway: ChatGateway,
                     config: RunConfig) -> list[bool]:
    """One boolean per item, from 'Qn: [answer]' lines. A malformed response
    gets one retry; lingering unparseable single answers default to no."""
    if not items:
        raise EmptyAnswers(f"no checklist items for {dimension}")
    meta = checklist.dimensions[dimension]
    template = load_prompt("eval_answering")
    system, user = template.fill(
        dimension=dimension,
        definition=meta["definition"],
        conditions=meta["conditions"] or "(none)",
        article=article,
        summary=render_report(report),
        questions=_format_questions(items),
    )

    def attempt(response: str) -> tuple[dict[int, str], bool]:
        lines = _parse_answer_lines(response, len(items))
        clean = all(_answer_value(raw) is not None for raw in lines.values())
        return lines, clean

    response = gateway.chat("eval_answering", user, system)
    retry_reason = None
    try:
        lines, clean = attempt(response)
        if not clean:
            retry_reason = "unparseable yes/no values"
    except MalformedOutput as error:
        retry_reason = str(error)
        lines = None
    if retry_reason is not None:
        logger.warning("answers for %s need a retry (%s)", dimension,
                       retry_reason)
        response = gateway.chat(
            "eval_answering",
            user + "\n\nREMINDER: Answer every question with exactly "
            "'Qn: yes' or 'Qn: no', one per line.",
            system,
        )
        lines, _ = attempt(response)

    answers: list[bool] = []
    for i in range(1, len(items) + 1):
        value = _answer_value(lines[i])
        if value is None:
            logger.warning("Q%d for %s unparseable (%r); counting as no",
                           i, dimension, lines[i])
            value = False
        answers.append(value)
    return answers


def score_dimension(dimension: str, answers: Sequence[bool]) -> DimensionScore:
    if not answers:
        raise EmptyAnswers(f"no answers for {dimension}")
    yes = sum(bool(a) for a in answers)
    return DimensionScore(dimension=dimension, yes_count=yes,
                          total=len(answers), score=10.0 * yes / len(answers))


def aggregate_overall(dimensions: dict[str, DimensionScore]) -> float:
    missing = [name for name in DIMENSIONS if name not in dimensions]
    if missing:
        raise MissingDimension(f"missing dimension scores: {missing}")
    return sum(dimensions[name].score for name in DIMENSIONS) / len(DIMENSIONS)


def compute_faithfulness_metrics(
    items: Sequence[ChecklistItem], answers: Sequence[bool],
    verdicts: Sequence[VerificationVerdict],
) -> FaithfulnessMetrics:
    """TF/CF from the target/cited partition of Faithfulness answers; CA from
    the verification verdicts (vacuously 100 when nothing was cited)."""
    if len(items) != len(answers):
        raise ValueError("items and answers are not aligned")
    target: list[bool] = []
    cited: list[bool] = []
    for item, answer in zip(items, answers):
        if item.dimension != "Faithfulness":
            continue
        if item.faithfulness_class == "target":
            target.append(answer)
        elif item.faithfulness_class == "cited":
            cited.append(answer)
        else:
            raise MissingClassAnnotations(
                f"Faithfulness item lacks a class: {item.question!r}"
            )
    if not target or not cited:
        raise MissingClassAnnotations("empty target or cited partition")
    tf = 100.0 * sum(target) / len(target)
    cf = 100.0 * sum(cited) / len(cited)
    if not verdicts:
        return FaithfulnessMetrics(tf=tf, cf=cf, ca=100.0, no_citations=True)
    incorrect = sum(1 for v in verdicts if v.result == "incorrect")
    ca = 100.0 * (len(verdicts) - incorrect) / len(verdicts)
    return FaithfulnessMetrics(tf=tf, cf=cf, ca=ca)


# --- cross-validation -------------------------------------------------------

@dataclass
class ScoreMatrix:
    """papers x models matrix of real-valued scores."""

    papers: list[str]
    models: list[str]
    scores: np.ndarray

    def __post_init__(self) -> None:
        self.scores = np.asarray(self.scores, dtype=float)
        if self.scores.shape != (len(self.papers), len(self.models)):
            raise IncompleteMatrix(
                f"matrix shape {self.scores.shape} does not match "
                f"{len(self.papers)} papers x {len(self.models)} models"
            )
        if len(self.models) < 2:
            raise IncompleteMatrix("need at least 2 models")
        if len(self.papers) < 1:
            raise IncompleteMatrix("need at least 1 paper")
        if not np.isfinite(self.scores).all():
            raise IncompleteMatrix("matrix has missing or non-finite cells")


def cross_validate(matrix: ScoreMatrix,
                   strategy: str = "leave_one_out") -> dict[str, dict[str, float]]:
    """Per-model MAE/MSE against a consensus proxy ground truth."""
    if strategy not in ("leave_one_out", "all_models"):
        raise ValueError(f"unknown strategy {strategy!r}")
    scores = matrix.scores
    n_models = len(matrix.models)
    totals = scores.sum(axis=1)
    results: dict[str, dict[str, float]] = {}
    for m, model in enumerate(matrix.models):
        column = scores[:, m]
        if strategy == "leave_one_out":
            ground_truth = (totals - column) / (n_models - 1)
        else:
            ground_truth = totals / n_models
        diffs = column - ground_truth
        results[model] = {
            "mae": float(np.mean(np.abs(diffs))),
            "mse": float(np.mean(diffs**2)),
        }
    return results


def load_score_matrix(path: str | Path) -> ScoreMatrix:
    """Reads a papers x models matrix from JSON or CSV.

    JSON: {"papers": [...], "models": [...], "scores": [[...], ...]}
    CSV: header "paper,<model>,<model>,..." then one row per paper.
    """
    path = Path(path)
    if path.suffix.lower() == ".json":
        payload = json.loads(path.read_text(encoding="utf-8"))
        try:
            return ScoreMatrix(papers=list(payload["papers"]),
                               models=list(payload["models"]),
                               scores=np.array(payload["scores"], dtype=float))
        except (KeyError, TypeError, ValueError) as exc:
            raise IncompleteMatrix(f"bad matrix file {path}: {exc}") from exc
    with path.open(newline="", encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    if not rows or len(rows[0]) < 3:
        raise IncompleteMatrix(f"bad matrix file {path}: need >=2 model columns")
    models = rows[0][1:]
    papers, scores = [], []
    for row in rows[1:]:
        if not row:
            continue
        papers.append(row[0])
        try:
            scores.append([float(cell) for cell in row[1:]])
        except ValueError as exc:
            raise IncompleteMatrix(f"bad matrix cell in {path}: {exc}") from exc
    return ScoreMatrix(papers=papers, models=models,
                       scores=np.array(scores, dtype=float))


# --- driver -----------------------------------------------------------------

def evaluate_report(report: Report, name_of: dict[str, str],
                    gateway: ChatGateway, config: RunConfig,
                    sparse: SparseIndex | None = None,
                    dense: DenseIndex | None = None,
                    chunks_by_id: dict | None = None,
                    reranker: RerankProvider | None = None) -> EvaluationResult:
    """Evaluate one report across all five dimensions, sequentially.

    RAG-backed dimensions retrieve supporting excerpts from the paper's
    database when indexes are supplied; Effectiveness is judged against the
    shipped report template instead of retrieved text.
    """
    checklist = load_checklist()
    can_retrieve = sparse is not None and dense is not None and chunks_by_id
    dimension_scores: dict[str, DimensionScore] = {}
    answer_records: list[dict] = []
    faithfulness_answers: list[bool] = []

    for dimension in DIMENSIONS:
        items = checklist.for_dimension(dimension)
        needs_rag = any(item.needs_rag for item in items)
        if dimension == "Effectiveness":
            article = _report_template_text()
        elif needs_rag and can_retrieve:
            queries = generate_eval_queries(report, dimension, items,
                                            checklist, gateway, config)
            retrieved = retrieve_for_queries(
                queries, sparse, dense, chunks_by_id, reranker,
                n_recall=config.n_recall, weight=config.fusion_weight,
                k_final=config.k_final, rerank_fallback=config.rerank_fallback,
            )
            merged = merge_contexts(
                retrieved, cap=config.queries_per_point * config.k_final
            )
            article = format_knowledge(merged, name_of)
        elif needs_rag:
            logger.warning("no indexes supplied; evaluating %s without "
                           "retrieved context", dimension)
            article = "(no database excerpts available)"
        else:
            article = "(no database excerpts required for this dimension)"

        answers = answer_checklist(report, dimension, items, checklist,
                                   article, gateway, config)
        dimension_scores[dimension] = score_dimension(dimension, answers)
        if dimension == "Faithfulness":
            faithfulness_answers = answers
        for item, answer in zip(items, answers):
            answer_records.append({
                "dimension": dimension,
                "group": item.group,
                "question": item.question,
                "answer": answer,
            })

    overall = aggregate_overall(dimension_scores)
    return EvaluationResult(report_id=report.target_id,
                            dimensions=dimension_scores, overall=overall,
                            answers=answer_records,
                            faithfulness_answers=faithfulness_answers)
