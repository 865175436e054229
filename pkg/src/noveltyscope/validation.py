"""Citation self-validation: extract -> dedup -> verify -> correct -> polish.

One pass, not iterated. The prompts state preservation contracts (references
untouched, structure intact, numerals kept); this module enforces them
mechanically instead of trusting the model. Verification is fail-open by
default (missing verdicts count as correct, logged); ``fail_closed`` flips
that to a hard MalformedOutput.
"""

from __future__ import annotations

import difflib
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .config import RunConfig
from .corpus import CorpusManifest, Document
from .errors import MalformedOutput, StructureViolation
from .gateway import ChatGateway, truncate_tokens
from .report import (
    CITE_NUMERAL_RE,
    REQUIRED_HEADERS,
    Report,
    parse_report,
    render_report,
    split_references,
)
from .templates import load_prompt

logger = logging.getLogger(__name__)

TRUNCATION_MARKERS = (
    "(continued...)",
    "(to be continued...)",
    "(rest remains the same...)",
    "(previous content...)",
    "[content omitted]",
    "(...)",
)


@dataclass
class CitationClaim:
    original_statement: str
    claim_explanation: str
    reference_name: str
    doc_id: str


@dataclass
class VerificationVerdict:
    claim: CitationClaim
    result: str  # "correct" | "incorrect"
    error_reason: str | None = None
    correction: str | None = None

    def __post_init__(self) -> None:
        if self.result not in ("correct", "incorrect"):
            raise ValueError(f"bad verdict result {self.result!r}")
        if self.result == "incorrect" and not (self.error_reason and self.correction):
            raise ValueError("incorrect verdicts need error_reason and correction")


@dataclass
class ValidationArtifacts:
    claims: list[CitationClaim] = field(default_factory=list)
    verdicts: list[VerificationVerdict] = field(default_factory=list)
    correction_diff: str = ""
    polish_fallback: bool = False

    @property
    def incorrect_count(self) -> int:
        return sum(1 for v in self.verdicts if v.result == "incorrect")

    def to_json(self) -> str:
        return json.dumps(
            {
                "claims": [vars(c) for c in self.claims],
                "verdicts": [
                    {
                        "claim": vars(v.claim),
                        "result": v.result,
                        "error_reason": v.error_reason,
                        "correction": v.correction,
                    }
                    for v in self.verdicts
                ],
                "correction_diff": self.correction_diff,
                "polish_fallback": self.polish_fallback,
            },
            ensure_ascii=False,
            indent=2,
        ) + "\n"

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "validation.json").write_text(self.to_json(), encoding="utf-8")


def load_artifacts(path: str | Path) -> ValidationArtifacts:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return ValidationArtifacts(
        claims=[CitationClaim(**record) for record in payload["claims"]],
        verdicts=[
            VerificationVerdict(
                claim=CitationClaim(**record["claim"]),
                result=record["result"],
                error_reason=record.get("error_reason"),
                correction=record.get("correction"),
            )
            for record in payload["verdicts"]
        ],
        correction_diff=payload.get("correction_diff", ""),
        polish_fallback=payload.get("polish_fallback", False),
    )


def _extract_json_payload(response: str):
    """Pull the first JSON array out of an LLM response."""
    text = response.strip()
    text = re.sub(r"^```(?:json)?\s*|\s*```$", "", text)
    start, end = text.find("["), text.rfind("]")
    if start < 0 or end <= start:
        raise MalformedOutput("no JSON list in response")
    try:
        payload = json.loads(text[start : end + 1])
    except json.JSONDecodeError as exc:
        raise MalformedOutput(f"invalid JSON: {exc}") from exc
    if not isinstance(payload, list):
        raise MalformedOutput("JSON payload is not a list")
    return payload


def _normalize_ws(text: str) -> str:
    return re.sub(r"\s+", " ", text).strip()


def _resolve_reference(name: str, by_name: dict[str, str]) -> str | None:
    """Map a reference_name string to a doc id, tolerating marker wrappers."""
    candidates = [name.strip()]
    stripped = re.sub(r"^##|\$\$$", "", name.strip())
    candidates.append(stripped)
    candidates.append(re.sub(r"^\[\d+\]\s*", "", stripped))
    for candidate in candidates:
        if candidate in by_name:
            return by_name[candidate]
    return None


def extract_claims(report: Report, manifest: CorpusManifest,
                   gateway: ChatGateway, config: RunConfig) -> list[CitationClaim]:
    rendered = render_report(report)
    template = load_prompt("claim_extraction")
    system, user = template.fill(report_text=rendered)

    def parse(response: str) -> list[dict]:
        payload = _extract_json_payload(response)
        for item in payload:
            if not isinstance(item, dict) or not {
                "original_statement", "claim_explanation", "reference_name"
            } <= set(item):
                raise MalformedOutput(f"claim entry missing fields: {item!r}")
        return payload

    response = gateway.chat("claim_extraction", user, system)
    try:
        payload = parse(response)
    except MalformedOutput as error:
        logger.warning("claim extraction malformed (%s); retrying once", error)
        response = gateway.chat(
            "claim_extraction",
            user + "\n\nREMINDER: Output only a JSON list of objects with keys "
            "original_statement, claim_explanation, reference_name.",
            system,
        )
        payload = parse(response)

    by_name = {meta.display_name: meta.id for meta in manifest.entries}
    normalized_report = _normalize_ws(rendered)
    claims: list[CitationClaim] = []
    for item in payload:
        doc_id = _resolve_reference(item["reference_name"], by_name)
        if doc_id is None:
            logger.warning("dropping claim with unknown reference %r",
                           item["reference_name"])
            continue
        statement = item["original_statement"]
        if statement not in rendered and _normalize_ws(statement) not in normalized_report:
            logger.warning("dropping claim whose statement is not in the report: %r",
                           statement[:80])
            continue
        claims.append(CitationClaim(
            original_statement=statement,
            claim_explanation=item["claim_explanation"],
            reference_name=item["reference_name"],
            doc_id=doc_id,
        ))
    return claims


def _group_by_doc(claims: list[CitationClaim]) -> dict[str, list[CitationClaim]]:
    groups: dict[str, list[CitationClaim]] = {}
    for claim in claims:
        groups.setdefault(claim.doc_id, []).append(claim)
    return groups


def dedup_claims(claims: list[CitationClaim], gateway: ChatGateway,
                 config: RunConfig) -> list[CitationClaim]:
    """Per-document LLM deduplication; singleton groups skip the gateway."""
    template = load_prompt("claim_dedup")
    kept: list[CitationClaim] = []
    for doc_id, group in _group_by_doc(claims).items():
        if len(group) == 1:
            kept.extend(group)
            continue
        statements = "\n".join(
            f"{i}. {claim.claim_explanation}" for i, claim in enumerate(group, 1)
        )
        system, user = template.fill(statements=statements)

        def parse(response: str) -> list[int]:
            payload = _extract_json_payload(response)
            if not all(isinstance(i, int) for i in payload):
                raise MalformedOutput("dedup indices must be integers")
            return payload

        try:
            indices = parse(gateway.chat("claim_dedup", user, system))
        except MalformedOutput as error:
            logger.warning("dedup for %s malformed (%s); retrying once",
                           doc_id, error)
            indices = parse(gateway.chat(
                "claim_dedup",
                user + "\n\nREMINDER: Output only a JSON list of integers.",
                system,
            ))
        valid = sorted({i for i in indices if 1 <= i <= len(group)})
        if not valid:
            logger.warning("dedup for %s kept nothing; keeping all claims", doc_id)
            valid = list(range(1, len(group) + 1))
        kept.extend(group[i - 1] for i in valid)
    return kept


def verify_claims(doc: Document, claims: list[CitationClaim],
                  gateway: ChatGateway, config: RunConfig) -> list[VerificationVerdict]:
    if not claims:
        return []
    for claim in claims:
        if claim.doc_id != doc.meta.id:
            raise ValueError(f"claim references {claim.doc_id}, not {doc.meta.id}")
    template = load_prompt("claim_validation")
    claim_lines = "\n".join(
        f"{i}. {claim.claim_explanation}" for i, claim in enumerate(claims, 1)
    )
    system, user = template.fill(
        reference_text=truncate_tokens(doc.cleaned_text,
                                       config.gateway.context_budget_tokens),
        claims=claim_lines,
    )

    def parse(response: str) -> dict[int, dict]:
        payload = _extract_json_payload(response)
        verdicts: dict[int, dict] = {}
        for item in payload:
            if not isinstance(item, dict) or "idx" not in item or "result" not in item:
                raise MalformedOutput(f"verdict entry missing fields: {item!r}")
            result = str(item["result"]).strip().lower()
            if result not in ("correct", "incorrect"):
                raise MalformedOutput(f"verdict result {item['result']!r} unknown")
            if result == "incorrect" and not (
                item.get("error_reason") and item.get("correction")
            ):
                raise MalformedOutput(
                    f"incorrect verdict {item['idx']} lacks error_reason/correction"
                )
            verdicts[int(item["idx"])] = {
                "result": result,
                "error_reason": item.get("error_reason"),
                "correction": item.get("correction"),
            }
        return verdicts

    response = gateway.chat("claim_validation", user, system)
    try:
        by_idx = parse(response)
    except MalformedOutput as error:
        logger.warning("verification for %s malformed (%s); retrying once",
                       doc.meta.id, error)
        response = gateway.chat(
            "claim_validation",
            user + "\n\nREMINDER: Output only a JSON list of objects with keys "
            "idx, result ('correct' or 'incorrect'), and, when incorrect, "
            "error_reason and correction.",
            system,
        )
        by_idx = parse(response)

    results: list[VerificationVerdict] = []
    for i, claim in enumerate(claims, 1):
        verdict = by_idx.get(i)
        if verdict is None:
            if config.fail_closed:
                raise MalformedOutput(
                    f"no verdict for claim {i} against {doc.meta.id}"
                )
            logger.warning("no verdict for claim %d against %s; "
                           "defaulting to correct", i, doc.meta.id)
            verdict = {"result": "correct", "error_reason": None, "correction": None}
        results.append(VerificationVerdict(
            claim=claim,
            result=verdict["result"],
            error_reason=verdict.get("error_reason"),
            correction=verdict.get("correction"),
        ))
    return results


def correct_report(report: Report, verdicts: list[VerificationVerdict],
                   gateway: ChatGateway, config: RunConfig) -> Report:
    """Whole-report rewrite fixing flagged citations; contracts enforced."""
    incorrect = [v for v in verdicts if v.result == "incorrect"]
    if not incorrect:
        return report

    original = render_report(report)
    validation_results = json.dumps(
        [
            {
                "original_statement": v.claim.original_statement,
                "reference_name": v.claim.reference_name,
                "error_reason": v.error_reason,
                "correction": v.correction,
            }
            for v in incorrect
        ],
        ensure_ascii=False,
        indent=2,
    )
    template = load_prompt("report_correction")
    system, user = template.fill(original_report=original,
                                 validation_results=validation_results)
    response = gateway.chat("report_correction", user, system).strip()
    response = re.sub(r"^```(?:markdown)?\s*\n|\n```$", "", response)
    if not response.endswith("\n"):
        response += "\n"

    _, original_refs = split_references(original)
    _, corrected_refs = split_references(response)
    if corrected_refs != original_refs:
        raise StructureViolation("correction modified the references section")
    for header in REQUIRED_HEADERS:
        if header not in response:
            raise StructureViolation(f"correction dropped header {header!r}")
    corrected = parse_report(response, target_id=report.target_id)
    if corrected.score != report.score:
        raise StructureViolation("correction changed the novelty score")
    return corrected


def polish_report(report: Report, gateway: ChatGateway,
                  config: RunConfig) -> tuple[Report, bool]:
    """Final polish; mechanical contract checks, fallback to input on any
    violation. Returns (report, fallback_used)."""
    original = render_report(report)
    template = load_prompt("report_polish")
    system, user = template.fill(report_content=original)
    response = gateway.chat("report_polish", user, system).strip()
    response = re.sub(r"^```(?:markdown)?\s*\n|\n```$", "", response)
    if not response.endswith("\n"):
        response += "\n"

    lowered = response.lower()
    for marker in TRUNCATION_MARKERS:
        if marker in lowered:
            logger.warning("polish output contains truncation marker %r; "
                           "keeping unpolished report", marker)
            return report, True
    try:
        polished = parse_report(response, target_id=report.target_id)
    except StructureViolation as error:
        logger.warning("polish broke report structure (%s); "
                       "keeping unpolished report", error)
        return report, True
    if polished.references != report.references:
        logger.warning("polish changed the references list; "
                       "keeping unpolished report")
        return report, True
    if polished.score != report.score:
        logger.warning("polish changed the score; keeping unpolished report")
        return report, True
    original_numerals = sorted(CITE_NUMERAL_RE.findall(split_references(original)[0]))
    polished_numerals = sorted(CITE_NUMERAL_RE.findall(split_references(response)[0]))
    if original_numerals != polished_numerals:
        logger.warning("polish changed inline reference numerals; "
                       "keeping unpolished report")
        return report, True
    return polished, False


def validate_report(report: Report, documents: dict[str, Document],
                    manifest: CorpusManifest, gateway: ChatGateway,
                    config: RunConfig) -> tuple[Report, ValidationArtifacts]:
    """The full one-pass validation cycle."""
    artifacts = ValidationArtifacts()
    artifacts.claims = extract_claims(report, manifest, gateway, config)
    deduped = dedup_claims(artifacts.claims, gateway, config)

    groups = _group_by_doc(deduped)

    def verify_group(item: tuple[str, list[CitationClaim]]):
        doc_id, claims = item
        doc = documents.get(doc_id)
        if doc is None or not doc.resolved:
            logger.warning("no resolved text for %s; skipping verification",
                           doc_id)
            return [VerificationVerdict(claim=c, result="correct")
                    for c in claims]
        return verify_claims(doc, claims, gateway, config)

    max_workers = max(1, config.gateway.max_in_flight)
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        verdict_groups = list(pool.map(verify_group, groups.items()))
    artifacts.verdicts = [v for group in verdict_groups for v in group]

    before = render_report(report)
    corrected = correct_report(report, artifacts.verdicts, gateway, config)
    after = render_report(corrected)
    if after != before:
        artifacts.correction_diff = "".join(
            difflib.unified_diff(
                before.splitlines(keepends=True),
                after.splitlines(keepends=True),
                fromfile="report.md",
                tofile="corrected.md",
            )
        )

    final, fallback = polish_report(corrected, gateway, config)
    artifacts.polish_fallback = fallback
    return final, artifacts
