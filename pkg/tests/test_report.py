"""Report model: rendering, parsing, citation rewriting, structure checks."""

import json

import pytest

from noveltyscope.errors import StructureViolation
from noveltyscope.report import (
    NO_POINTS_BODY,
    CitationRewriter,
    NoveltyPoint,
    PointAnalysis,
    Report,
    check_citation_closure,
    load_report,
    parse_references,
    parse_report,
    render_report,
    report_from_json,
    report_to_json,
    save_report,
    split_references,
)

REF_A = "a01_Alpha Methods for Sparse Signals"
REF_B = "b02_Beta Networks at Scale"
REF_C = "c03_Gamma Estimation Revisited"


def make_analysis(index, *, details=None, citations=None):
    point = NoveltyPoint(
        index=index,
        classification="Methodological/Algorithmic",
        description=f"Claim {index} about the estimator.",
    )
    return PointAnalysis(
        point=point,
        claimed_novelty=f"Claim {index} about the estimator.",
        similarities=f"Prior work shares the setup of claim {index} [1].",
        unique_differences=f"The target adds a constraint missing from claim {index}.",
        details=details,
        citations=list(citations or []),
    )


def make_report(*, analyses=None, references=None, score=3):
    if analyses is None:
        analyses = [
            make_analysis(1, details="The prior estimator drops the constraint [2]."),
            make_analysis(2),
        ]
    if references is None:
        references = [REF_A, REF_B]
    return Report(
        target_id="t-x",
        content_summary="A one-paragraph summary of the target paper.",
        analyses=analyses,
        novelty_summary=(
            "The main claim survives comparison [1].\n\n"
            f"**Final One-line Summary:** {score} – Fair: holds up."
        ),
        score=score,
        references=references,
    )


class TestCitationRewriter:
    def test_first_citation_order(self):
        rewriter = CitationRewriter({"beta": REF_B, "alpha": REF_A})
        text = "Beta leads ##beta$$. Alpha follows ##alpha$$. Beta again ##beta$$."
        rewritten, bindings = rewriter.rewrite(text)
        assert rewritten == "Beta leads [1]. Alpha follows [2]. Beta again [1]."
        assert rewriter.references == [REF_B, REF_A]
        assert [ref for _, ref in bindings] == [REF_B, REF_A, REF_B]

    def test_numbering_continues_across_calls(self):
        rewriter = CitationRewriter({"alpha": REF_A, "beta": REF_B})
        first, _ = rewriter.rewrite("See ##alpha$$.")
        second, _ = rewriter.rewrite("Then ##beta$$ and ##alpha$$.")
        assert first == "See [1]."
        assert second == "Then [2] and [1]."
        assert rewriter.references == [REF_A, REF_B]

    def test_unknown_marker_dropped(self, caplog):
        rewriter = CitationRewriter({"alpha": REF_A})
        with caplog.at_level("WARNING"):
            rewritten, bindings = rewriter.rewrite(
                "Known ##alpha$$ and unknown ##ghost$$ here."
            )
        assert rewritten == "Known [1] and unknown  here."
        assert rewriter.references == [REF_A]
        assert [ref for _, ref in bindings] == [REF_A]
        assert "ghost" in caplog.text

    def test_marker_name_is_stripped(self):
        rewriter = CitationRewriter({"alpha": REF_A})
        rewritten, _ = rewriter.rewrite("Cited ##  alpha  $$ loosely.")
        assert rewritten == "Cited [1] loosely."

    def test_bindings_capture_containing_sentence(self):
        rewriter = CitationRewriter({"alpha": REF_A})
        text = "First sentence. Mid claim with ##alpha$$ support. Last sentence."
        _, bindings = rewriter.rewrite(text)
        assert bindings == [("Mid claim with [1] support.", REF_A)]

    def test_id_and_display_name_map_to_same_reference(self):
        rewriter = CitationRewriter({"a01": REF_A, REF_A: REF_A})
        rewritten, _ = rewriter.rewrite(f"By id ##a01$$ and by name ##{REF_A}$$.")
        assert rewritten == "By id [1] and by name [1]."
        assert rewriter.references == [REF_A]


class TestRenderParse:
    def test_round_trip_preserves_fields(self):
        report = make_report()
        parsed = parse_report(render_report(report), target_id=report.target_id)
        assert parsed.content_summary == report.content_summary
        assert parsed.score == report.score
        assert parsed.references == report.references
        assert len(parsed.analyses) == len(report.analyses)
        for got, want in zip(parsed.analyses, report.analyses):
            assert got.point.index == want.point.index
            assert got.point.classification == want.point.classification
            assert got.claimed_novelty == want.claimed_novelty
            assert got.similarities == want.similarities
            assert got.unique_differences == want.unique_differences
            assert got.details == want.details

    def test_round_trip_without_details(self):
        report = make_report(analyses=[make_analysis(1)])
        parsed = parse_report(render_report(report))
        assert parsed.analyses[0].details is None

    def test_render_is_deterministic(self):
        report = make_report()
        assert render_report(report) == render_report(report)

    def test_render_has_exactly_three_headers(self):
        rendered = render_report(make_report())
        headers = [l for l in rendered.splitlines() if l.startswith("## ")]
        assert headers == [
            "## 1. Paper Content Summary",
            "## 2. Point-wise Novelty Analysis",
            "## 3. Novelty Summary",
        ]

    def test_no_points_body(self):
        report = make_report(analyses=[], references=[], score=1)
        rendered = render_report(report)
        assert NO_POINTS_BODY in rendered
        assert "### 2." not in rendered
        parsed = parse_report(rendered)
        assert parsed.analyses == []
        assert parsed.score == 1

    def test_parse_resolves_citation_numerals_to_references(self):
        report = make_report()
        parsed = parse_report(render_report(report))
        citations = parsed.analyses[0].citations
        assert (
            "Prior work shares the setup of claim 1 [1].",
            REF_A,
        ) in citations
        assert (
            "The prior estimator drops the constraint [2].",
            REF_B,
        ) in citations

    def test_parse_drops_out_of_range_numerals(self):
        analysis = make_analysis(1)
        analysis.similarities = "Cites something missing [9]."
        report = make_report(analyses=[analysis])
        parsed = parse_report(render_report(report))
        assert parsed.analyses[0].citations == []

    def test_golden_report_parses(self, golden_dir):
        text = (golden_dir / "report.md").read_text(encoding="utf-8")
        parsed = parse_report(text, target_id="t001")
        assert len(parsed.analyses) == 2
        assert parsed.score == 3
        assert len(parsed.references) == 6
        assert parsed.analyses[0].details is not None
        assert parsed.analyses[1].details is None
        saved = report_from_json(
            (golden_dir / "report.json").read_text(encoding="utf-8")
        )
        assert render_report(saved) == text


class TestReferencesBlock:
    def test_split_references(self):
        rendered = render_report(make_report())
        body, block = split_references(rendered)
        assert body + block == rendered
        assert block.startswith("References:\n")
        assert "References:" not in body

    def test_split_without_block(self):
        body, block = split_references("plain text\nno references here\n")
        assert block == ""
        assert body == "plain text\nno references here\n"

    def test_split_uses_last_marker_line(self):
        text = "References:\n[1] early\n\nReferences:\n[1] late\n"
        body, block = split_references(text)
        assert block == "References:\n[1] late\n"
        assert body.endswith("[1] early\n\n")

    def test_split_text_starting_with_marker(self):
        text = "References:\n[1] only\n"
        body, block = split_references(text)
        assert body == ""
        assert block == text

    def test_parse_references(self):
        block = f"References:\n[1] {REF_A}\n[2] {REF_B}\n\n"
        assert parse_references(block) == [REF_A, REF_B]

    def test_parse_references_ignores_noise_lines(self):
        block = f"References:\n[1] {REF_A}\nnot a reference\n[2] {REF_B}\n"
        assert parse_references(block) == [REF_A, REF_B]


class TestStructureViolations:
    def test_missing_header(self):
        rendered = render_report(make_report())
        broken = rendered.replace("## 2. Point-wise Novelty Analysis\n", "")
        with pytest.raises(StructureViolation):
            parse_report(broken)

    def test_headers_out_of_order(self):
        rendered = render_report(make_report())
        swapped = rendered.replace(
            "## 1. Paper Content Summary", "## TMP"
        ).replace(
            "## 3. Novelty Summary", "## 1. Paper Content Summary"
        ).replace("## TMP", "## 3. Novelty Summary")
        with pytest.raises(StructureViolation):
            parse_report(swapped)

    def test_point_missing_subsections(self):
        rendered = render_report(make_report(analyses=[make_analysis(1)]))
        broken = rendered.replace("**b. Similarities:**\n", "")
        with pytest.raises(StructureViolation):
            parse_report(broken)

    def test_missing_score_line(self):
        report = make_report()
        rendered = render_report(report).replace("**Final One-line Summary:**", "")
        with pytest.raises(StructureViolation):
            parse_report(rendered)

    @pytest.mark.parametrize("dash", ["–", "—", "-"])
    def test_score_dash_variants(self, dash):
        report = make_report()
        report.novelty_summary = f"Summary.\n\n**Final One-line Summary:** 2 {dash} Poor-to-fair."
        report.score = 2
        parsed = parse_report(render_report(report))
        assert parsed.score == 2

    def test_score_outside_range_not_matched(self):
        report = make_report()
        rendered = render_report(report).replace(
            "**Final One-line Summary:** 3 –", "**Final One-line Summary:** 7 –"
        )
        with pytest.raises(StructureViolation):
            parse_report(rendered)


class TestCitationClosure:
    def test_closed_report_passes(self):
        check_citation_closure(render_report(make_report()))

    def test_dangling_citation_fails(self):
        analysis = make_analysis(1)
        analysis.similarities = "Cites nothing real [3]."
        report = make_report(analyses=[analysis])
        with pytest.raises(StructureViolation, match="no references entry"):
            check_citation_closure(render_report(report))

    def test_uncited_reference_fails(self):
        report = make_report(references=[REF_A, REF_B, REF_C])
        with pytest.raises(StructureViolation, match="never cited"):
            check_citation_closure(render_report(report))

    def test_golden_report_is_closed(self, golden_dir):
        check_citation_closure((golden_dir / "report.md").read_text(encoding="utf-8"))


class TestJsonRoundTrip:
    def test_json_round_trip(self):
        report = make_report()
        report.analyses[0].citations = [("A sentence [1].", REF_A)]
        recovered = report_from_json(report_to_json(report))
        assert recovered == report

    def test_save_and_load(self, tmp_path):
        report = make_report()
        save_report(report, tmp_path, stem="report")
        assert (tmp_path / "report.md").read_text(encoding="utf-8") == render_report(report)
        loaded = load_report(tmp_path / "report.json")
        assert render_report(loaded) == render_report(report)

    def test_json_is_stable(self):
        report = make_report()
        payload = json.loads(report_to_json(report))
        assert payload["score"] == report.score
        assert payload["references"] == report.references


class TestModelValidation:
    @pytest.mark.parametrize("score", [0, 5, -1])
    def test_score_range_enforced(self, score):
        with pytest.raises(ValueError, match="score"):
            Report(
                target_id="t",
                content_summary="s",
                analyses=[],
                novelty_summary="n",
                score=score,
                references=[],
            )

    def test_unknown_classification_rejected(self):
        with pytest.raises(ValueError, match="classification"):
            NoveltyPoint(index=1, classification="Magic", description="d")
