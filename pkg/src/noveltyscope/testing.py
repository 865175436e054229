"""Deterministic stub providers shipped for tests and offline runs."""

from __future__ import annotations

import hashlib
import threading
import time
from collections import deque

import numpy as np

from .errors import ProviderUnavailable
from .gateway import TranscriptWriter
from .retrieval import bm25_tokenize


class MockChatGateway:
    """Scripted chat gateway: per-stage FIFO queues of canned responses.

    Tracks an in-flight gauge so tests can assert the concurrency bound.
    """

    def __init__(self, scripts: dict[str, list[str]],
                 transcript: TranscriptWriter | None = None,
                 delay: float = 0.0):
        self.scripts = {stage: deque(items) for stage, items in scripts.items()}
        self.transcript = transcript
        self.delay = delay
        self.calls: list[tuple[str, str]] = []  # (stage, user prompt)
        self.in_flight = 0
        self.max_in_flight_seen = 0
        self._lock = threading.Lock()

    def chat(self, stage: str, user: str, system: str | None = None) -> str:
        with self._lock:
            self.in_flight += 1
            self.max_in_flight_seen = max(self.max_in_flight_seen, self.in_flight)
            self.calls.append((stage, user))
            queue = self.scripts.get(stage)
            response = queue.popleft() if queue else None
        try:
            if self.delay:
                time.sleep(self.delay)
            if response is None:
                raise ProviderUnavailable(
                    f"mock gateway has no scripted response for stage {stage!r}"
                )
            if self.transcript is not None:
                self.transcript.record(stage, user, system, response)
            return response
        finally:
            with self._lock:
                self.in_flight -= 1

    def remaining(self) -> dict[str, int]:
        return {stage: len(q) for stage, q in self.scripts.items() if q}


class StubEmbedder:
    """Hash-based deterministic embeddings: shared tokens => shared mass.

    Token hashes (blake2b, so independent of PYTHONHASHSEED) scatter unit
    contributions over a fixed-dimension vector; texts with overlapping
    vocabulary therefore get high cosine similarity.
    """

    def __init__(self, dim: int = 32):
        self.dim = dim

    def _token_slot(self, token: str) -> tuple[int, float]:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        value = int.from_bytes(digest, "big")
        return value % self.dim, 1.0 if (value >> 32) % 2 else -1.0

    def embed(self, texts: list[str]) -> list[list[float]]:
        vectors = []
        for text in texts:
            vec = np.zeros(self.dim, dtype=np.float64)
            for token in bm25_tokenize(text):
                slot, sign = self._token_slot(token)
                vec[slot] += sign
            vectors.append(vec.tolist())
        return vectors


class OverlapReranker:
    """Scores passages by query-token overlap, with a substring-match bonus."""

    def rerank_score(self, query: str, passages: list[str]) -> list[float]:
        query_tokens = set(bm25_tokenize(query))
        scores = []
        for passage in passages:
            overlap = len(query_tokens & set(bm25_tokenize(passage)))
            score = overlap / max(len(query_tokens), 1)
            if query.lower() in passage.lower():
                score += 1.0
            scores.append(score)
        return scores
