"""Acceptance gate: one test per headline guarantee, one pass line each.

Each test re-derives its expectation from first principles (hand arithmetic,
brute-force oracles, golden files) rather than trusting the implementation
under test, and prints a single ``[ACCEPTANCE PASS]`` line on success; a
failure surfaces as the test's FAILED line.
"""

import json
import math
import random
from collections import Counter
from datetime import date, timedelta

import numpy as np
import pytest
from click.testing import CliRunner

from noveltyscope.config import RunConfig
from noveltyscope.corpus import PaperMeta, rank_and_truncate
from noveltyscope.cli import main as cli_main
from noveltyscope.evaluation import (
    ScoreMatrix,
    compute_faithfulness_metrics,
    cross_validate,
    load_checklist,
    load_score_table,
)
from noveltyscope.ingest import DEFAULT_TOKENIZER, Document, chunk_document
from noveltyscope.corpus import INGEST_RESOLVED
from noveltyscope.report import check_citation_closure, parse_report
from noveltyscope.retrieval import (
    SparseIndex,
    bm25_tokenize,
    embed_chunks,
    hybrid_recall,
)
from noveltyscope.ingest import Chunk
from noveltyscope.testing import StubEmbedder
from noveltyscope.validation import CitationClaim, VerificationVerdict
from tests.conftest import write_cli_config


def report_pass(capsys, line: str) -> None:
    with capsys.disabled():
        print(f"\n[ACCEPTANCE PASS] {line}")


# --- 1. Table 1 consistency --------------------------------------------------

def test_table_1_overall_equals_dimension_mean(capsys):
    table = load_score_table()
    rows = table["rows"]
    assert len(rows) == 7
    for row in rows:
        assert len(row["scores"]) == 5
        mean = sum(row["scores"]) / 5
        assert abs(mean - row["overall"]) <= 0.005, (
            f"{row['model']}: mean {mean:.4f} vs printed {row['overall']}"
        )
    by_model = {row["model"]: row["overall"] for row in rows}
    assert by_model["noveltyscope"] == pytest.approx(9.33, abs=0.005)
    assert by_model["GPT-5 DeepResearch"] == pytest.approx(8.47, abs=0.005)
    report_pass(capsys, "Table 1 consistency: all 7 overalls equal the "
                        "dimension mean within ±0.005")


# --- 2. Checklist registry integrity ----------------------------------------

def test_checklist_registry_integrity(capsys):
    checklist = load_checklist()
    assert len(checklist.items) == 69
    counts = Counter(item.dimension for item in checklist.items)
    assert counts == {"Fluency": 11, "Effectiveness": 13, "Completeness": 18,
                      "Faithfulness": 14, "Depth": 13}
    report_pass(capsys, "Checklist registry integrity: 69 items, "
                        "counts 11/13/18/14/13")


# --- 3. Retrieval oracle equivalence ----------------------------------------

RETRIEVAL_VOCAB = [
    "ode", "graph", "latent", "solver", "clinical", "series", "sparse",
    "attention", "kernel", "flow", "bayes", "gate", "step", "patient",
    "state", "field", "time", "irregular", "dense", "recall", "filter",
    "mortality", "interpolation", "benchmark", "trajectory",
]


def _synthetic_chunks(n: int, seed: int) -> list[Chunk]:
    rng = random.Random(seed)
    chunks = []
    for i in range(n):
        words = rng.randrange(15, 45)
        text = " ".join(rng.choices(RETRIEVAL_VOCAB, k=words))
        chunks.append(Chunk(chunk_id=f"c{i:04d}", doc_id=f"d{i % 25}",
                            ordinal=0, text=text, token_count=words))
    return chunks


def _oracle_bm25(token_lists, token_sets, query_terms, k1=1.2, b=0.75):
    n = len(token_lists)
    avg = sum(len(t) for t in token_lists) / n
    dfs = {
        term: sum(1 for s in token_sets if term in s) for term in set(query_terms)
    }
    scores = []
    for tokens in token_lists:
        counts = Counter(tokens)
        dl = len(tokens)
        score = 0.0
        for term in query_terms:  # one contribution per query occurrence
            df = dfs[term]
            tf = counts[term]
            if df == 0 or tf == 0:
                continue
            idf = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
            score += idf * tf * (k1 + 1.0) / (
                tf + k1 * (1.0 - b + b * dl / avg)
            )
        scores.append(score)
    return scores


def _oracle_pool(ids, scores, n_recall, positive_only):
    hits = [
        (cid, s) for cid, s in zip(ids, scores) if (s > 0.0 or not positive_only)
    ]
    hits.sort(key=lambda pair: (-pair[1], pair[0]))
    return dict(hits[:n_recall])


def _oracle_minmax(pool):
    if not pool:
        return {}
    lo, hi = min(pool.values()), max(pool.values())
    if hi == lo:
        return {cid: 1.0 for cid in pool}
    return {cid: (v - lo) / (hi - lo) for cid, v in pool.items()}


def test_retrieval_oracle_equivalence(capsys):
    n_recall, weight = 50, 0.5
    chunks = _synthetic_chunks(500, seed=11)
    ids = [c.chunk_id for c in chunks]
    index = SparseIndex(chunks)
    embedder = StubEmbedder()
    dense = embed_chunks(chunks, embedder)

    # Independent primitives: tokenized chunks and unit-normalized embeddings.
    token_lists = [bm25_tokenize(c.text) for c in chunks]
    token_sets = [set(t) for t in token_lists]
    raw = np.asarray(embedder.embed([c.text for c in chunks]), dtype=np.float32)
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    unit = raw / norms

    rng = random.Random(99)
    for _ in range(200):
        terms = rng.choices(RETRIEVAL_VOCAB, k=rng.randrange(2, 6))
        query = " ".join(terms)

        sparse_oracle = _oracle_bm25(token_lists, token_sets,
                                     bm25_tokenize(query))
        got_sparse = index.scores(query)
        assert np.max(np.abs(got_sparse - np.asarray(sparse_oracle))) <= 1e-9

        qvec = np.asarray(embedder.embed([query])[0], dtype=np.float32)
        qnorm = np.linalg.norm(qvec)
        qvec = qvec / (qnorm if qnorm else 1.0)
        dense_oracle = (unit @ qvec).tolist()

        spool = _oracle_pool(ids, sparse_oracle, n_recall, positive_only=True)
        dpool = _oracle_pool(ids, dense_oracle, n_recall, positive_only=False)
        snorm, dnorm = _oracle_minmax(spool), _oracle_minmax(dpool)
        fused = [
            (weight * snorm.get(cid, 0.0) + (1 - weight) * dnorm.get(cid, 0.0),
             cid)
            for cid in set(spool) | set(dpool)
        ]
        fused.sort(key=lambda pair: (-pair[0], pair[1]))
        expected = fused[:n_recall]

        got = hybrid_recall(query, index, dense, n_recall=n_recall,
                            weight=weight)
        assert [sc.chunk_id for sc in got] == [cid for _, cid in expected]
        for sc, (score, _) in zip(got, expected):
            assert sc.fused_score == pytest.approx(score, abs=1e-9)

    report_pass(capsys, "Retrieval oracle equivalence: 200 queries over 500 "
                        "chunks match brute-force fusion; BM25 within 1e-9")


# --- 4. Chunker losslessness -------------------------------------------------

def _synthetic_document(rng: random.Random, idx: int) -> Document:
    pieces = []
    for _ in range(rng.randrange(200, 1400)):
        roll = rng.random()
        if roll < 0.75:
            pieces.append(rng.choice(RETRIEVAL_VOCAB))
        elif roll < 0.85:
            pieces.append(rng.choice([",", ".", ";", "—", "λ≈0.5", "§2"]))
        elif roll < 0.95:
            pieces.append(rng.choice(["\n", "\n\n", "\t", "  "]))
        else:
            pieces.append(rng.choice(["naïve", "Schrödinger", "η", "×10³"]))
    text = " ".join(pieces)
    meta = PaperMeta(id=f"doc{idx:03d}", title=f"Synthetic {idx}")
    return Document(meta=meta, raw_text=text, cleaned_text=text,
                    ingest_status=INGEST_RESOLVED)


def test_chunker_losslessness(capsys):
    rng = random.Random(4242)
    max_tokens = 512
    for idx in range(50):
        doc = _synthetic_document(rng, idx)
        chunks = chunk_document(doc, max_tokens=max_tokens)
        assert "".join(c.text for c in chunks) == doc.cleaned_text
        for chunk in chunks:
            measured = DEFAULT_TOKENIZER.count(chunk.text)
            assert measured <= max_tokens
            assert chunk.token_count == measured
        for chunk in chunks[:-1]:
            assert chunk.token_count == max_tokens
        assert [c.ordinal for c in chunks] == list(range(len(chunks)))
    report_pass(capsys, "Chunker losslessness: 50 documents reconstruct "
                        "byte-exactly; every chunk <= 512 tokens")


# --- 5. Corpus ranking oracle ------------------------------------------------

def _random_reference_set(rng: random.Random):
    n_first = rng.randrange(0, 6)
    n_second = rng.randrange(0, 12)
    first = [PaperMeta(id=f"f{i}", title=f"First {i}", order="first")
             for i in range(n_first)]
    second = []
    for i in range(n_second):
        dated = rng.random() < 0.8
        when = (date(2015, 1, 1) + timedelta(days=rng.randrange(0, 3000))
                if dated else None)
        second.append(PaperMeta(
            id=f"s{i}", title=f"Second {i}", publication_date=when,
            order="second", cited_by_first_order=rng.randrange(0, 5),
        ))
    return first, second


def _oracle_rank(second):
    def key(pair):
        fetch_pos, meta = pair
        dated = meta.publication_date is not None
        ordinal = meta.publication_date.toordinal() if dated else 0
        return (-meta.cited_by_first_order, 0 if dated else 1, -ordinal,
                fetch_pos)
    return [meta for _, meta in sorted(enumerate(second), key=key)]


def test_corpus_ranking_oracle(capsys):
    rng = random.Random(20240315)
    for _ in range(1000):
        first, second = _random_reference_set(rng)
        capacity = len(first) + rng.randrange(0, len(second) + 3)
        manifest = rank_and_truncate(first, second, capacity, target_id="t")
        ranked = _oracle_rank(second)
        expected = [m.id for m in first] + \
                   [m.id for m in ranked[: capacity - len(first)]]
        assert manifest.doc_ids() == expected
        # First-order retention.
        assert [m.id for m in manifest.entries[: len(first)]] == \
               [m.id for m in first]
        # Prefix monotonicity: growing capacity only appends.
        wider = rank_and_truncate(first, second, capacity + 3, target_id="t")
        assert wider.doc_ids()[: len(manifest.entries)] == manifest.doc_ids()
    report_pass(capsys, "Corpus ranking oracle: 1000 random graphs match the "
                        "brute-force comparator; retention and prefix "
                        "monotonicity hold")


# --- 6. End-to-end mock run --------------------------------------------------

DATA_HELP = "fixture corpus + recorded transcripts under tests/data/"


def _replay(tmp_path, data_dir, commands):
    tmp_path.mkdir(parents=True, exist_ok=True)
    config = write_cli_config(tmp_path)
    runner = CliRunner()
    result = runner.invoke(cli_main, ["--config", str(config),
                                      "build-db", "t001"])
    assert result.exit_code == 0, result.output
    for command in commands:
        transcript = data_dir / "transcripts" / f"{command}.jsonl"
        result = runner.invoke(cli_main, [
            "--config", str(config), "--mock-transcript", str(transcript),
            command, "t001",
        ])
        assert result.exit_code == 0, result.output
    return tmp_path / "runs" / "t001"


def test_end_to_end_mock_run(capsys, tmp_path, data_dir, golden_dir):
    run_tree = _replay(tmp_path, data_dir, ["generate"])
    text = (run_tree / "reports" / "report.md").read_text(encoding="utf-8")

    headers = [l for l in text.splitlines() if l.startswith("## ")]
    assert len(headers) == 3
    report = parse_report(text, target_id="t001")
    assert 0 < len(report.analyses) <= 5
    for analysis in report.analyses:
        assert analysis.claimed_novelty
        assert analysis.similarities
        assert analysis.unique_differences
    assert report.analyses[0].details is not None  # unique differences found
    assert report.analyses[1].details is None  # none found -> no subsection d
    assert report.score in (1, 2, 3, 4)
    check_citation_closure(text)
    assert text.encode() == (golden_dir / "report.md").read_bytes()
    report_pass(capsys, "End-to-end mock run: three sections, <=5 points with "
                        "a-c (+conditional d), score in 1..4, citation "
                        "closure, byte-golden output")


# --- 7. Self-validation contracts -------------------------------------------

def test_self_validation_contracts(capsys, tmp_path, data_dir, golden_dir):
    # Incorrect-verdict transcript: references byte-identical, diff touches
    # only the flagged sentence.
    run_tree = _replay(tmp_path / "fix", data_dir, ["generate", "validate"])
    original = (run_tree / "reports" / "report.md").read_text(encoding="utf-8")
    validated = (run_tree / "validation" / "validated.md").read_text(
        encoding="utf-8")
    assert validated != original

    refs_original = original[original.index("References:"):]
    refs_validated = validated[validated.index("References:"):]
    assert refs_original == refs_validated

    changed_original = [l for l in original.splitlines()
                        if l not in validated.splitlines()]
    changed_validated = [l for l in validated.splitlines()
                         if l not in original.splitlines()]
    flagged = "Latent ODEs also evolve"
    assert len(changed_original) == 1 and flagged in changed_original[0]
    assert len(changed_validated) == 1 and flagged in changed_validated[0]

    # All-correct transcript: validation is a fixed point.
    statement = ("GRU-ODE-Bayes likewise updates a continuous latent state "
                 "with Bayesian jumps at observation times [2].")
    assert statement in original
    entries = [
        {"stage": "claim_extraction", "prompt": "p", "response": json.dumps([{
            "original_statement": statement,
            "claim_explanation": "GRU-ODE-Bayes applies Bayesian updates "
                                 "to a continuous latent state.",
            "reference_name": "r03_GRU-ODE-Bayes: Continuous Modeling of "
                              "Sporadically-Observed Time Series",
        }])},
        {"stage": "claim_validation", "prompt": "p",
         "response": '[{"idx": 1, "result": "correct"}]'},
        {"stage": "report_polish", "prompt": "p", "response": original},
    ]
    transcript = tmp_path / "all_correct.jsonl"
    transcript.write_text("\n".join(json.dumps(e) for e in entries) + "\n",
                          encoding="utf-8")
    fixed_tree = _replay(tmp_path / "fixed", data_dir, ["generate"])
    config = write_cli_config(tmp_path / "fixed")
    result = CliRunner().invoke(cli_main, [
        "--config", str(config), "--mock-transcript", str(transcript),
        "validate", "t001",
    ])
    assert result.exit_code == 0, result.output
    fixed_point = (fixed_tree / "validation" / "validated.md").read_bytes()
    assert fixed_point == (fixed_tree / "reports" / "report.md").read_bytes()
    report_pass(capsys, "Self-validation contracts: references byte-identical "
                        "with a single-sentence diff; all-correct run is a "
                        "fixed point")


# --- 8. Cross-validation arithmetic -----------------------------------------

def _oracle_cross_validate(scores, strategy):
    n_papers, n_models = scores.shape
    out = []
    for m in range(n_models):
        diffs = []
        for p in range(n_papers):
            others = [scores[p, k] for k in range(n_models) if k != m]
            if strategy == "leave_one_out":
                gt = sum(others) / len(others)
            else:
                gt = (sum(others) + scores[p, m]) / n_models
            diffs.append(scores[p, m] - gt)
        out.append(diffs)
    return out


def test_cross_validation_arithmetic(capsys):
    # Hand-computed 2-model cases.
    matrix = ScoreMatrix(papers=["p1"], models=["a", "b"],
                         scores=np.array([[1.0, 2.0]]))
    loo = cross_validate(matrix, "leave_one_out")
    assert loo == {"a": {"mae": 1.0, "mse": 1.0}, "b": {"mae": 1.0, "mse": 1.0}}
    allm = cross_validate(matrix, "all_models")
    assert allm == {"a": {"mae": 0.5, "mse": 0.25},
                    "b": {"mae": 0.5, "mse": 0.25}}
    matrix2 = ScoreMatrix(papers=["p1", "p2"], models=["a", "b"],
                          scores=np.array([[4.0, 2.0], [3.0, 5.0]]))
    loo2 = cross_validate(matrix2, "leave_one_out")
    assert loo2["a"] == {"mae": 2.0, "mse": 4.0}  # diffs +2, -2
    allm2 = cross_validate(matrix2, "all_models")
    assert allm2["a"] == {"mae": 1.0, "mse": 1.0}  # diffs +1, -1

    # 1000 random matrices against the brute-force oracle.
    rng = np.random.RandomState(7)
    for _ in range(1000):
        n_papers = rng.randint(1, 5)
        n_models = rng.randint(2, 6)
        scores = rng.uniform(0.0, 10.0, size=(n_papers, n_models))
        papers = [f"p{i}" for i in range(n_papers)]
        models = [f"m{j}" for j in range(n_models)]
        matrix = ScoreMatrix(papers=papers, models=models, scores=scores)
        oracle_loo = _oracle_cross_validate(scores, "leave_one_out")
        oracle_all = _oracle_cross_validate(scores, "all_models")
        got_loo = cross_validate(matrix, "leave_one_out")
        got_all = cross_validate(matrix, "all_models")
        factor = (n_models - 1) / n_models
        for m, model in enumerate(models):
            diffs_loo = np.asarray(oracle_loo[m])
            diffs_all = np.asarray(oracle_all[m])
            # Per-difference (N-1)/N relationship between the two strategies.
            assert np.allclose(diffs_all, diffs_loo * factor, atol=1e-12)
            assert got_loo[model]["mae"] == pytest.approx(
                np.mean(np.abs(diffs_loo)), abs=1e-9)
            assert got_loo[model]["mse"] == pytest.approx(
                np.mean(diffs_loo**2), abs=1e-9)
            assert got_all[model]["mae"] == pytest.approx(
                np.mean(np.abs(diffs_all)), abs=1e-9)
            assert got_all[model]["mse"] == pytest.approx(
                np.mean(diffs_all**2), abs=1e-9)
    report_pass(capsys, "Cross-validation arithmetic: hand matrices exact; "
                        "1000 random matrices match the oracle with the "
                        "(N-1)/N relationship")


# --- 9. Faithfulness metrics -------------------------------------------------

def _verdict(result):
    claim = CitationClaim(original_statement="s", claim_explanation="e",
                          reference_name="r", doc_id="d")
    if result == "incorrect":
        return VerificationVerdict(claim=claim, result=result,
                                   error_reason="why", correction="fix")
    return VerificationVerdict(claim=claim, result="correct")


def test_faithfulness_metrics(capsys):
    items = load_checklist().for_dimension("Faithfulness")
    # Saturated target partition, 6/7 cited partition.
    answers = []
    cited_seen = 0
    for item in items:
        if item.faithfulness_class == "target":
            answers.append(True)
        else:
            cited_seen += 1
            answers.append(cited_seen <= 6)
    verdicts = [_verdict("correct")] * 9 + [_verdict("incorrect")]
    metrics = compute_faithfulness_metrics(items, answers, verdicts)
    assert metrics.tf == 100.0  # saturation
    assert metrics.cf == pytest.approx(100.0 * 6 / 7)
    assert metrics.ca == pytest.approx(90.0)  # 1 of 10 incorrect
    assert metrics.no_citations is False

    vacuous = compute_faithfulness_metrics(items, answers, [])
    assert vacuous.ca == 100.0 and vacuous.no_citations is True
    report_pass(capsys, "Faithfulness metrics: TF saturation at 100, "
                        "CF 6/7, CA 90.0 with 1/10 incorrect, vacuous CA "
                        "flagged")
