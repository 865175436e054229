"""Report model: three fixed sections, inline citations, renderer and parser.

The rendered report is UTF-8 markdown with exactly three ``##`` headers. A
trailing ``References:`` block (not a markdown header, so the three-section
contract stays intact) lists each cited document once, in first-citation
order. Analyst stages emit raw ``##document_name$$`` citation markers;
assembly rewrites them to bracketed numerals.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import StructureViolation

logger = logging.getLogger(__name__)

CLASSIFICATIONS = (
    "Methodological/Algorithmic",
    "Theoretical",
    "System/Infrastructure",
    "Dataset/Benchmark",
    "Empirical/Analytical",
    "Task/Application",
)

SECTION_1 = "## 1. Paper Content Summary"
SECTION_2 = "## 2. Point-wise Novelty Analysis"
SECTION_3 = "## 3. Novelty Summary"
REQUIRED_HEADERS = (SECTION_1, SECTION_2, SECTION_3)
REFERENCES_LINE = "References:"

NO_POINTS_BODY = "No explicit innovation claims identified."
NO_POINTS_SUMMARY = (
    "No explicit innovation claims were identified in the paper, so no "
    "point-wise comparison against the literature could be performed.\n\n"
    "**Final One-line Summary:** 1 – Poor: No explicit innovation claims "
    "identified."
)

# Raw citation marker emitted by the analyst: ##document_name$$
CITE_MARKER_RE = re.compile(r"##([^#$\n]+?)\$\$")
# Rewritten inline citation: [n]
CITE_NUMERAL_RE = re.compile(r"\[(\d+)\]")
_POINT_HEADER_RE = re.compile(r"^### 2\.(\d+)\. Novelty Point \1$", re.MULTILINE)
_SCORE_RE = re.compile(r"Final One-line Summary:\*?\*?\s*([1-4])\s*[–—-]")


@dataclass(frozen=True)
class NoveltyPoint:
    """One discrete innovation claim extracted from the target paper."""

    index: int  # 1-based
    classification: str
    description: str

    def __post_init__(self) -> None:
        if self.classification not in CLASSIFICATIONS:
            raise ValueError(f"unknown classification: {self.classification!r}")


@dataclass
class PointAnalysis:
    point: NoveltyPoint
    claimed_novelty: str
    similarities: str
    unique_differences: str
    details: str | None = None
    # (containing sentence, reference name) bindings, in order of appearance
    citations: list[tuple[str, str]] = field(default_factory=list)


@dataclass
class Report:
    target_id: str
    content_summary: str
    analyses: list[PointAnalysis]
    novelty_summary: str
    score: int
    references: list[str]  # rendered reference strings, first-citation order

    def __post_init__(self) -> None:
        if self.score not in (1, 2, 3, 4):
            raise ValueError(f"score must be 1..4, got {self.score}")


def _containing_sentence(text: str, pos: int) -> str:
    """The sentence (or line) around ``pos``, used for citation bindings."""
    start = max(text.rfind(". ", 0, pos), text.rfind("\n", 0, pos))
    start = start + 1 if start >= 0 else 0
    end_dot = text.find(". ", pos)
    end_nl = text.find("\n", pos)
    candidates = [c for c in (end_dot, end_nl) if c >= 0]
    end = (min(candidates) + 1) if candidates else len(text)
    return text[start:end].strip()


class CitationRewriter:
    """Rewrites ``##name$$`` markers to ``[n]`` in first-citation order.

    ``known_names`` maps every acceptable marker spelling (display name or
    bare document id) to the canonical reference string. Markers naming
    unknown documents are dropped and logged.
    """

    def __init__(self, known_names: dict[str, str]):
        self.known_names = known_names
        self.references: list[str] = []

    def rewrite(self, text: str) -> tuple[str, list[tuple[str, str]]]:
        out: list[str] = []
        length = 0
        positions: list[tuple[int, str]] = []  # (offset in rewritten text, ref)
        last = 0
        for match in CITE_MARKER_RE.finditer(text):
            name = match.group(1).strip()
            canonical = self.known_names.get(name)
            out.append(text[last : match.start()])
            length += match.start() - last
            last = match.end()
            if canonical is None:
                logger.warning("dropping citation of unknown document %r", name)
                continue
            if canonical not in self.references:
                self.references.append(canonical)
            numeral = f"[{self.references.index(canonical) + 1}]"
            positions.append((length, canonical))
            out.append(numeral)
            length += len(numeral)
        out.append(text[last:])
        rewritten = "".join(out)
        bindings = [
            (_containing_sentence(rewritten, pos), canonical)
            for pos, canonical in positions
        ]
        return rewritten, bindings


def render_report(report: Report) -> str:
    """Deterministic markdown rendering; the golden-file anchor."""
    parts: list[str] = [SECTION_1, "", report.content_summary.strip(), ""]
    parts.append(SECTION_2)
    parts.append("")
    if not report.analyses:
        parts.extend([NO_POINTS_BODY, ""])
    for analysis in report.analyses:
        i = analysis.point.index
        parts.append(f"### 2.{i}. Novelty Point {i}")
        parts.append("")
        parts.append(
            f"**a. Claimed novelty:** Classification: "
            f"{analysis.point.classification}"
        )
        parts.append("")
        parts.extend([analysis.claimed_novelty.strip(), ""])
        parts.append("**b. Similarities:**")
        parts.append("")
        parts.extend([analysis.similarities.strip(), ""])
        parts.append("**c. Unique Differences:**")
        parts.append("")
        parts.extend([analysis.unique_differences.strip(), ""])
        if analysis.details is not None:
            parts.append("**d. Details of Unique Differences:**")
            parts.append("")
            parts.extend([analysis.details.strip(), ""])
    parts.append(SECTION_3)
    parts.append("")
    parts.extend([report.novelty_summary.strip(), ""])
    if report.references:
        parts.append(REFERENCES_LINE)
        for n, name in enumerate(report.references, start=1):
            parts.append(f"[{n}] {name}")
        parts.append("")
    return "\n".join(parts).rstrip("\n") + "\n"


def split_references(text: str) -> tuple[str, str]:
    """Split rendered text into (body, references block).

    The references block starts at the last line equal to ``References:``;
    it is empty when no such line exists.
    """
    marker = f"\n{REFERENCES_LINE}\n"
    idx = text.rfind(marker)
    if idx < 0:
        if text.startswith(REFERENCES_LINE + "\n"):
            return "", text
        return text, ""
    return text[: idx + 1], text[idx + 1 :]


def parse_references(block: str) -> list[str]:
    refs: list[str] = []
    for line in block.splitlines():
        match = re.match(r"^\[(\d+)\]\s+(.*\S)\s*$", line)
        if match:
            refs.append(match.group(2))
    return refs


def _section_bodies(text: str) -> tuple[str, str, str]:
    positions = []
    for header in REQUIRED_HEADERS:
        idx = text.find(header + "\n")
        if idx < 0 and not text.rstrip("\n").endswith(header):
            raise StructureViolation(f"missing header {header!r}")
        positions.append(idx)
    if positions != sorted(positions):
        raise StructureViolation("section headers out of order")
    bodies = []
    for i, header in enumerate(REQUIRED_HEADERS):
        start = positions[i] + len(header)
        end = positions[i + 1] if i + 1 < len(positions) else len(text)
        bodies.append(text[start:end].strip("\n"))
    return bodies[0], bodies[1], bodies[2]


_SUBSECTION_RE = re.compile(
    r"\*\*a\. Claimed novelty:\*\* Classification: (?P<cls>[^\n]+)\n"
    r"(?P<a>.*?)"
    r"\*\*b\. Similarities:\*\*\n"
    r"(?P<b>.*?)"
    r"\*\*c\. Unique Differences:\*\*\n"
    r"(?P<c>.*?)"
    r"(?:\*\*d\. Details of Unique Differences:\*\*\n(?P<d>.*))?$",
    re.DOTALL,
)


def _parse_point_block(index: int, block: str) -> PointAnalysis:
    match = _SUBSECTION_RE.search(block)
    if match is None:
        raise StructureViolation(f"novelty point {index} lacks a/b/c subsections")
    classification = match.group("cls").strip()
    point = NoveltyPoint(index=index, classification=classification,
                         description=match.group("a").strip())
    details = match.group("d")
    analysis = PointAnalysis(
        point=point,
        claimed_novelty=match.group("a").strip(),
        similarities=match.group("b").strip(),
        unique_differences=match.group("c").strip(),
        details=details.strip() if details is not None else None,
    )
    for numeral_match in CITE_NUMERAL_RE.finditer(block):
        analysis.citations.append(
            (_containing_sentence(block, numeral_match.start()),
             numeral_match.group(1))
        )
    return analysis


def parse_report(text: str, target_id: str = "") -> Report:
    """Inverse of render_report, tolerant of polished whitespace.

    Raises StructureViolation when the three-section contract is broken.
    """
    body, ref_block = split_references(text)
    references = parse_references(ref_block)
    summary, points_body, novelty_body = _section_bodies(body)

    analyses: list[PointAnalysis] = []
    headers = list(_POINT_HEADER_RE.finditer(points_body))
    for i, header in enumerate(headers):
        start = header.end()
        end = headers[i + 1].start() if i + 1 < len(headers) else len(points_body)
        analysis = _parse_point_block(int(header.group(1)),
                                      points_body[start:end].strip("\n"))
        # Bindings carry numerals at parse time; resolve them to reference
        # strings, dropping any numeral without a references entry.
        analysis.citations = [
            (sentence, references[int(numeral) - 1])
            for sentence, numeral in analysis.citations
            if 1 <= int(numeral) <= len(references)
        ]
        analyses.append(analysis)

    score_match = _SCORE_RE.search(novelty_body)
    if score_match is None:
        raise StructureViolation("no parseable novelty score in section 3")

    return Report(
        target_id=target_id,
        content_summary=summary,
        analyses=analyses,
        novelty_summary=novelty_body,
        score=int(score_match.group(1)),
        references=references,
    )


def check_citation_closure(text: str) -> None:
    """Every [n] in the body resolves to a reference; every reference cited."""
    body, ref_block = split_references(text)
    references = parse_references(ref_block)
    cited = {int(m.group(1)) for m in CITE_NUMERAL_RE.finditer(body)}
    valid = set(range(1, len(references) + 1))
    if not cited <= valid:
        raise StructureViolation(
            f"citations {sorted(cited - valid)} have no references entry"
        )
    if not valid <= cited:
        raise StructureViolation(
            f"references {sorted(valid - cited)} are never cited"
        )


def report_to_json(report: Report) -> str:
    payload = {
        "target_id": report.target_id,
        "content_summary": report.content_summary,
        "analyses": [
            {
                "index": a.point.index,
                "classification": a.point.classification,
                "description": a.point.description,
                "claimed_novelty": a.claimed_novelty,
                "similarities": a.similarities,
                "unique_differences": a.unique_differences,
                "details": a.details,
                "citations": [list(c) for c in a.citations],
            }
            for a in report.analyses
        ],
        "novelty_summary": report.novelty_summary,
        "score": report.score,
        "references": report.references,
    }
    return json.dumps(payload, ensure_ascii=False, indent=2) + "\n"


def report_from_json(text: str) -> Report:
    payload = json.loads(text)
    analyses = []
    for item in payload["analyses"]:
        point = NoveltyPoint(index=item["index"],
                             classification=item["classification"],
                             description=item["description"])
        analyses.append(PointAnalysis(
            point=point,
            claimed_novelty=item["claimed_novelty"],
            similarities=item["similarities"],
            unique_differences=item["unique_differences"],
            details=item["details"],
            citations=[tuple(c) for c in item["citations"]],
        ))
    return Report(
        target_id=payload["target_id"],
        content_summary=payload["content_summary"],
        analyses=analyses,
        novelty_summary=payload["novelty_summary"],
        score=payload["score"],
        references=payload["references"],
    )


def save_report(report: Report, directory: str | Path, stem: str = "report") -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / f"{stem}.md").write_text(render_report(report), encoding="utf-8")
    (directory / f"{stem}.json").write_text(report_to_json(report), encoding="utf-8")


def load_report(path: str | Path) -> Report:
    return report_from_json(Path(path).read_text(encoding="utf-8"))
