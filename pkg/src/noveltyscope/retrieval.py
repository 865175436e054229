"""Two-stage hybrid retrieval.

Stage one recalls candidates through two parallel pathways, lexical BM25 and
dense cosine similarity, min-max normalizes each pathway over its own top
candidates, and fuses the normalized scores. Stage two reranks the fused
candidates with a cross-scoring provider and keeps the top ``k_final``.

Both indexes are exact (full postings, linear cosine scan) so ranking can be
checked against brute-force scoring in tests.
"""

from __future__ import annotations

import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyCorpus, ProviderUnavailable
from .ingest import Chunk

logger = logging.getLogger(__name__)

_WORD_RE = re.compile(r"\w+")


def bm25_tokenize(text: str) -> list[str]:
    """Lowercased word tokens for lexical matching."""
    return _WORD_RE.findall(text.lower())


@dataclass
class ScoredChunk:
    """Per-candidate scores accumulated through the retrieval stages."""

    chunk_id: str
    sparse_score: float = 0.0
    dense_score: float = 0.0
    fused_score: float = 0.0
    rerank_score: float | None = None


@dataclass
class RetrievedContext:
    """Final context for one query: top chunks sorted by rerank score."""

    query: str
    chunks: list[tuple[ScoredChunk, Chunk]]
    rerank_fallback: bool = False

    @property
    def provenance(self) -> list[str]:
        return [chunk.doc_id for _, chunk in self.chunks]


class SparseIndex:
    """Okapi BM25 over a fixed chunk set.

    idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)); duplicate query terms
    contribute once per occurrence.
    """

    def __init__(self, chunks: Sequence[Chunk], k1: float = 1.2, b: float = 0.75):
        if not chunks:
            raise EmptyCorpus("cannot build a sparse index over zero chunks")
        self.k1 = k1
        self.b = b
        self.chunk_ids = [c.chunk_id for c in chunks]
        self.doc_lengths: list[int] = []
        self.postings: dict[str, list[tuple[int, int]]] = {}
        for idx, chunk in enumerate(chunks):
            tokens = bm25_tokenize(chunk.text)
            self.doc_lengths.append(len(tokens))
            for term, tf in Counter(tokens).items():
                self.postings.setdefault(term, []).append((idx, tf))
        self.n_chunks = len(chunks)
        self.avg_length = sum(self.doc_lengths) / self.n_chunks

    def scores(self, query: str) -> np.ndarray:
        """BM25 score for every chunk (zeros where no term matches)."""
        out = np.zeros(self.n_chunks)
        for term in bm25_tokenize(query):
            entries = self.postings.get(term)
            if not entries:
                continue
            df = len(entries)
            idf = math.log(1.0 + (self.n_chunks - df + 0.5) / (df + 0.5))
            for idx, tf in entries:
                dl = self.doc_lengths[idx]
                denom = tf + self.k1 * (1.0 - self.b + self.b * dl / self.avg_length)
                out[idx] += idf * tf * (self.k1 + 1.0) / denom
        return out

    def top_n(self, query: str, n: int) -> list[tuple[str, float]]:
        """Top ``n`` chunks with positive score, ties broken by chunk id."""
        scores = self.scores(query)
        hits = [
            (self.chunk_ids[i], float(s)) for i, s in enumerate(scores) if s > 0.0
        ]
        hits.sort(key=lambda pair: (-pair[1], pair[0]))
        return hits[:n]


class EmbeddingProvider(Protocol):
    def embed(self, texts: list[str]) -> list[list[float]]: ...


class RerankProvider(Protocol):
    def rerank_score(self, query: str, passages: list[str]) -> list[float]: ...


class DenseIndex:
    """Unit-normalized embedding matrix with exact cosine search."""

    def __init__(self, chunk_ids: list[str], matrix: np.ndarray,
                 provider: EmbeddingProvider):
        self.chunk_ids = chunk_ids
        self.matrix = matrix
        self.provider = provider

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def embed_query(self, query: str) -> np.ndarray:
        vec = np.asarray(self.provider.embed([query])[0], dtype=np.float32)
        if vec.shape[0] != self.dim:
            raise DimensionMismatch(
                f"query embedding dim {vec.shape[0]} != index dim {self.dim}"
            )
        return _normalize_rows(vec[None, :])[0]

    def scores(self, query: str) -> np.ndarray:
        """Cosine similarity of the query against every chunk."""
        return self.matrix @ self.embed_query(query)

    def top_n(self, query: str, n: int) -> list[tuple[str, float]]:
        scores = self.scores(query)
        hits = [(cid, float(scores[i])) for i, cid in enumerate(self.chunk_ids)]
        hits.sort(key=lambda pair: (-pair[1], pair[0]))
        return hits[:n]


def _normalize_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return matrix / norms


def embed_chunks(chunks: Sequence[Chunk], provider: EmbeddingProvider) -> DenseIndex:
    """Embed every chunk and build an exact dense index."""
    if not chunks:
        raise EmptyCorpus("cannot build a dense index over zero chunks")
    vectors = provider.embed([c.text for c in chunks])
    dims = {len(v) for v in vectors}
    if len(dims) != 1:
        raise DimensionMismatch(f"provider returned mixed dimensions: {sorted(dims)}")
    matrix = _normalize_rows(np.asarray(vectors, dtype=np.float32))
    return DenseIndex([c.chunk_id for c in chunks], matrix, provider)


def min_max_normalize(scores: dict[str, float]) -> dict[str, float]:
    """Min-max normalize a candidate pool; constant pools map to 1.0."""
    if not scores:
        return {}
    lo, hi = min(scores.values()), max(scores.values())
    if hi == lo:
        return {cid: 1.0 for cid in scores}
    return {cid: (s - lo) / (hi - lo) for cid, s in scores.items()}


def hybrid_recall(
    query: str,
    sparse: SparseIndex,
    dense: DenseIndex,
    n_recall: int = 50,
    weight: float = 0.5,
) -> list[ScoredChunk]:
    """Fuse the two recall pathways over the union of their candidate pools.

    Each pathway's raw scores are min-max normalized over its own top
    ``n_recall`` candidates; a candidate missing from a pathway's pool
    contributes 0 on that side. Result is sorted by fused score (chunk id
    breaks ties) and truncated to ``n_recall``.
    """
    sparse_pool = dict(sparse.top_n(query, n_recall))
    dense_pool = dict(dense.top_n(query, n_recall))
    sparse_norm = min_max_normalize(sparse_pool)
    dense_norm = min_max_normalize(dense_pool)

    fused = []
    for cid in set(sparse_pool) | set(dense_pool):
        ns = sparse_norm.get(cid, 0.0)
        nd = dense_norm.get(cid, 0.0)
        fused.append(
            ScoredChunk(
                chunk_id=cid,
                sparse_score=sparse_pool.get(cid, 0.0),
                dense_score=dense_pool.get(cid, 0.0),
                fused_score=weight * ns + (1.0 - weight) * nd,
            )
        )
    fused.sort(key=lambda sc: (-sc.fused_score, sc.chunk_id))
    return fused[:n_recall]


def rerank(
    query: str,
    candidates: list[tuple[ScoredChunk, Chunk]],
    provider: RerankProvider | None,
    k_final: int = 7,
    fallback: bool = True,
) -> RetrievedContext:
    """Second-stage scoring; keeps the top ``k_final`` candidates.

    When the provider is down and ``fallback`` is enabled, fused-score order
    stands in for rerank order and the context is flagged accordingly.
    """
    used_fallback = False
    if provider is None:
        if not fallback:
            raise ProviderUnavailable("no rerank provider configured")
        used_fallback = True
    else:
        try:
            scores = provider.rerank_score(query, [c.text for _, c in candidates])
            for (scored, _), value in zip(candidates, scores):
                scored.rerank_score = float(value)
        except ProviderUnavailable:
            if not fallback:
                raise
            used_fallback = True

    if used_fallback:
        logger.warning("rerank provider unavailable; falling back to fused order")
        for scored, _ in candidates:
            scored.rerank_score = scored.fused_score

    ordered = sorted(candidates, key=lambda pair: (-pair[0].rerank_score, pair[0].chunk_id))
    return RetrievedContext(
        query=query, chunks=ordered[:k_final], rerank_fallback=used_fallback
    )


def retrieve_for_queries(
    queries: list[str],
    sparse: SparseIndex,
    dense: DenseIndex,
    chunks_by_id: dict[str, Chunk],
    reranker: RerankProvider | None = None,
    n_recall: int = 50,
    weight: float = 0.5,
    k_final: int = 7,
    rerank_fallback: bool = True,
) -> list[RetrievedContext]:
    """Run recall and rerank for each query independently."""
    contexts = []
    for query in queries:
        recalled = hybrid_recall(query, sparse, dense, n_recall, weight)
        candidates = [(sc, chunks_by_id[sc.chunk_id]) for sc in recalled]
        if not candidates:
            contexts.append(RetrievedContext(query=query, chunks=[]))
            continue
        contexts.append(rerank(query, candidates, reranker, k_final, rerank_fallback))
    return contexts


def merge_contexts(
    contexts: list[RetrievedContext], cap: int | None = None
) -> list[tuple[ScoredChunk, Chunk]]:
    """Deduplicate chunks across query contexts, keeping best rerank score."""
    best: dict[str, tuple[ScoredChunk, Chunk]] = {}
    for context in contexts:
        for scored, chunk in context.chunks:
            current = best.get(scored.chunk_id)
            if current is None or (scored.rerank_score or 0.0) > (
                current[0].rerank_score or 0.0
            ):
                best[scored.chunk_id] = (scored, chunk)
    merged = sorted(
        best.values(), key=lambda pair: (-(pair[0].rerank_score or 0.0), pair[0].chunk_id)
    )
    if cap is not None:
        merged = merged[:cap]
    return merged


# --- persistence ------------------------------------------------------------

def save_sparse_index(index: SparseIndex, path: str | Path) -> None:
    payload = {
        "k1": index.k1,
        "b": index.b,
        "chunk_ids": index.chunk_ids,
        "doc_lengths": index.doc_lengths,
        "postings": {term: entries for term, entries in index.postings.items()},
    }
    Path(path).write_text(json.dumps(payload, ensure_ascii=False), encoding="utf-8")


def load_sparse_index(path: str | Path) -> SparseIndex:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    index = SparseIndex.__new__(SparseIndex)
    index.k1 = payload["k1"]
    index.b = payload["b"]
    index.chunk_ids = payload["chunk_ids"]
    index.doc_lengths = payload["doc_lengths"]
    index.postings = {
        term: [tuple(entry) for entry in entries]
        for term, entries in payload["postings"].items()
    }
    index.n_chunks = len(index.chunk_ids)
    index.avg_length = sum(index.doc_lengths) / index.n_chunks
    return index


def save_dense_index(index: DenseIndex, matrix_path: str | Path,
                     header_path: str | Path) -> None:
    """Flat float32 matrix plus a JSON header naming rows."""
    index.matrix.astype(np.float32).tofile(matrix_path)
    header = {"dim": index.dim, "count": len(index.chunk_ids), "ids": index.chunk_ids}
    Path(header_path).write_text(json.dumps(header), encoding="utf-8")


def load_dense_index(matrix_path: str | Path, header_path: str | Path,
                     provider: EmbeddingProvider) -> DenseIndex:
    header = json.loads(Path(header_path).read_text(encoding="utf-8"))
    matrix = np.fromfile(matrix_path, dtype=np.float32).reshape(
        header["count"], header["dim"]
    )
    return DenseIndex(header["ids"], matrix, provider)
