"""Uniform access to chat, embedding, and rerank providers.

All providers speak an OpenAI-compatible JSON schema over HTTP. The gateway
is the single concurrency choke point: a semaphore bounds in-flight requests,
failed calls retry with exponential backoff, and every chat exchange is
appended to a JSON-lines transcript that can later be replayed for
byte-identical offline runs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from collections import deque
from pathlib import Path
from typing import Protocol

import requests

from .config import GatewayConfig
from .errors import BudgetExceeded, ProviderUnavailable
from .ingest import DEFAULT_TOKENIZER

logger = logging.getLogger(__name__)

_RETRYABLE = {429, 500, 502, 503, 504}


class ChatGateway(Protocol):
    def chat(self, stage: str, user: str, system: str | None = None) -> str: ...


def count_tokens(text: str) -> int:
    return DEFAULT_TOKENIZER.count(text)


def truncate_tokens(text: str, budget: int) -> str:
    """Keep the first ``budget`` tokens, preserving the head of the text."""
    spans = DEFAULT_TOKENIZER.spans(text)
    if len(spans) <= budget:
        return text
    return text[: spans[budget][0]]


def request_hash(stage: str, user: str, system: str | None = None) -> str:
    digest = hashlib.sha256()
    digest.update(stage.encode("utf-8"))
    digest.update(b"\x00")
    digest.update((system or "").encode("utf-8"))
    digest.update(b"\x00")
    digest.update(user.encode("utf-8"))
    return digest.hexdigest()


class TranscriptWriter:
    """Thread-safe append-only JSONL transcript."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def record(self, stage: str, user: str, system: str | None, response: str) -> None:
        entry = {
            "stage": stage,
            "request_hash": request_hash(stage, user, system),
            "prompt": (system + "\n\n" + user) if system else user,
            "response": response,
            "sent_at": time.time(),
        }
        line = json.dumps(entry, ensure_ascii=False) + "\n"
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line)


class HttpGateway:
    """Chat, embedding, and rerank access over OpenAI-compatible endpoints.

    Request schemas (documented in the README):

    - chat:   POST chat_endpoint   {"model", "messages", "temperature"}
    - embed:  POST embed_endpoint  {"model", "input": [texts]}
    - rerank: POST rerank_endpoint {"model", "query", "documents"}
    """

    def __init__(self, config: GatewayConfig,
                 session: requests.Session | None = None,
                 transcript: TranscriptWriter | None = None):
        self.config = config
        self.session = session or requests.Session()
        self.transcript = transcript
        self._gate = threading.Semaphore(config.max_in_flight)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        return headers

    def _post(self, endpoint: str, payload: dict) -> dict:
        if not endpoint:
            raise ProviderUnavailable("endpoint not configured")
        last_error: str = ""
        for attempt in range(self.config.max_attempts):
            if attempt:
                time.sleep(self.config.backoff_seconds * 2 ** (attempt - 1))
            with self._gate:
                try:
                    resp = self.session.post(
                        endpoint,
                        json=payload,
                        headers=self._headers(),
                        timeout=self.config.request_timeout,
                    )
                except requests.RequestException as exc:
                    last_error = str(exc)
                    continue
            if resp.status_code in _RETRYABLE:
                last_error = f"HTTP {resp.status_code}"
                continue
            if resp.status_code >= 400:
                raise ProviderUnavailable(f"POST {endpoint} -> {resp.status_code}")
            return resp.json()
        raise ProviderUnavailable(
            f"POST {endpoint} failed after {self.config.max_attempts} attempts"
            f" ({last_error})"
        )

    def _fit_budget(self, user: str, system: str | None) -> str:
        budget = self.config.context_budget_tokens
        system_tokens = count_tokens(system) if system else 0
        if system_tokens >= budget:
            raise BudgetExceeded(
                f"system prompt alone holds {system_tokens} tokens (budget {budget})"
            )
        room = budget - system_tokens
        if count_tokens(user) <= room:
            return user
        logger.warning("prompt over context budget; truncating to %d tokens", room)
        return truncate_tokens(user, room)

    def chat(self, stage: str, user: str, system: str | None = None) -> str:
        user = self._fit_budget(user, system)
        messages = []
        if system:
            messages.append({"role": "system", "content": system})
        messages.append({"role": "user", "content": user})
        payload = {
            "model": self.config.chat_model,
            "messages": messages,
            "temperature": self.config.temperature,
        }
        data = self._post(self.config.chat_endpoint, payload)
        response = data["choices"][0]["message"]["content"]
        if self.transcript is not None:
            self.transcript.record(stage, user, system, response)
        return response

    def embed(self, texts: list[str]) -> list[list[float]]:
        """Batched embedding with order-preserving reassembly."""
        if not texts:
            return []
        vectors: list[list[float]] = []
        size = self.config.embed_batch_size
        for start in range(0, len(texts), size):
            batch = texts[start : start + size]
            data = self._post(
                self.config.embed_endpoint,
                {"model": self.config.embed_model, "input": batch},
            )
            items = sorted(data["data"], key=lambda item: item.get("index", 0))
            vectors.extend(_unit(item["embedding"]) for item in items)
        return vectors

    def rerank_score(self, query: str, passages: list[str]) -> list[float]:
        if not passages:
            return []
        data = self._post(
            self.config.rerank_endpoint,
            {"model": self.config.rerank_model, "query": query, "documents": passages},
        )
        results = sorted(data["results"], key=lambda item: item["index"])
        return [float(item["relevance_score"]) for item in results]


def _unit(vector: list[float]) -> list[float]:
    norm = sum(v * v for v in vector) ** 0.5
    if norm == 0.0:
        return list(vector)
    return [v / norm for v in vector]


class ReplayGateway:
    """Serves chat responses from a recorded transcript.

    Lookup is keyed by request hash (FIFO per hash, so repeated identical
    prompts replay in recorded order), with a per-stage FIFO fallback for
    hand-written transcripts that omit hashes.
    """

    def __init__(self, path: str | Path,
                 transcript: TranscriptWriter | None = None):
        self.by_hash: dict[str, deque[str]] = {}
        self.by_stage: dict[str, deque[str]] = {}
        self.transcript = transcript
        self._lock = threading.Lock()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                entry = json.loads(line)
                response = entry["response"]
                key = entry.get("request_hash")
                if key:
                    self.by_hash.setdefault(key, deque()).append(response)
                self.by_stage.setdefault(entry["stage"], deque()).append(response)

    def chat(self, stage: str, user: str, system: str | None = None) -> str:
        key = request_hash(stage, user, system)
        with self._lock:
            queue = self.by_hash.get(key)
            if queue:
                response = queue.popleft()
            else:
                stage_queue = self.by_stage.get(stage)
                if not stage_queue:
                    raise ProviderUnavailable(
                        f"transcript has no response for stage {stage!r}"
                    )
                response = stage_queue.popleft()
        if self.transcript is not None:
            self.transcript.record(stage, user, system, response)
        return response
