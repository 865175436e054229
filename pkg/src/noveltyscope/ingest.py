"""Text cleaning and fixed-size chunking.

Cleaning strips the trailing reference list. Chunking cuts the cleaned text
into at-most-512-token pieces whose concatenation reproduces the input
byte-for-byte, so nothing is lost between the document store and the index.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

from .corpus import Document
from .errors import EmptyDocument

# Case-insensitive headings that open a trailing bibliography. A heading must
# occupy a whole line, optionally prefixed by markdown hashes / numbering and
# suffixed by a colon.
REFERENCE_HEADINGS = (
    "references",
    "reference",
    "bibliography",
    "works cited",
    "literature cited",
    "references cited",
    "references and notes",
)

_HEADING_RE = re.compile(
    r"^[ \t]*(?:#{1,6}[ \t]*)?(?:[0-9]+\.?|[IVXL]+\.|[A-Z]\.)?[ \t]*\**(%s)\**:?[ \t]*$"
    % "|".join(h.replace(" ", r"\s+") for h in REFERENCE_HEADINGS),
    re.IGNORECASE | re.MULTILINE,
)


def clean_text(raw: str) -> str:
    """Remove the trailing reference list, if one is detected.

    The last line matching a known bibliography heading marks the cut; from
    there to the end is dropped. Only a suffix is ever removed, and a document
    that opens with such a heading (i.e. has no body before it) is returned
    unchanged.
    """
    last = None
    for match in _HEADING_RE.finditer(raw):
        last = match
    if last is None:
        return raw
    if not raw[: last.start()].strip():
        return raw
    return raw[: last.start()]


@dataclass(frozen=True)
class Chunk:
    """One indexed slice of a document."""

    chunk_id: str
    doc_id: str
    ordinal: int
    text: str
    token_count: int


class Tokenizer(Protocol):
    def spans(self, text: str) -> list[tuple[int, int]]:
        """Return (start, end) offsets of each token, in order."""
        ...


class SimpleTokenizer:
    """Whitespace-and-punctuation tokenizer.

    A token is a maximal run of word characters or a single other
    non-whitespace character. Serves as the default when the embedding
    provider does not expose its own tokenization.
    """

    _TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)

    def spans(self, text: str) -> list[tuple[int, int]]:
        return [m.span() for m in self._TOKEN_RE.finditer(text)]

    def count(self, text: str) -> int:
        return len(self._TOKEN_RE.findall(text))


DEFAULT_TOKENIZER = SimpleTokenizer()


def chunk_document(
    doc: Document,
    max_tokens: int = 512,
    tokenizer: Tokenizer = DEFAULT_TOKENIZER,
) -> list[Chunk]:
    """Partition ``doc.cleaned_text`` into chunks of at most ``max_tokens``.

    Boundaries fall on token starts, so joining the chunk texts in ordinal
    order reproduces the cleaned text exactly. Every chunk except possibly
    the last carries exactly ``max_tokens`` tokens.
    """
    if not doc.resolved:
        raise EmptyDocument(f"document {doc.meta.id} is not resolved")
    if max_tokens < 1:
        raise ValueError("max_tokens must be >= 1")
    text = doc.cleaned_text
    spans = tokenizer.spans(text)
    if not spans:
        raise EmptyDocument(f"document {doc.meta.id} has no tokens")

    chunks = []
    for ordinal, i in enumerate(range(0, len(spans), max_tokens)):
        window = spans[i : i + max_tokens]
        start = 0 if i == 0 else window[0][0]
        end = len(text) if i + max_tokens >= len(spans) else spans[i + max_tokens][0]
        chunks.append(
            Chunk(
                chunk_id=f"{doc.meta.id}#{ordinal}",
                doc_id=doc.meta.id,
                ordinal=ordinal,
                text=text[start:end],
                token_count=len(window),
            )
        )
    return chunks


def chunk_corpus(
    documents: list[Document],
    max_tokens: int = 512,
    tokenizer: Tokenizer = DEFAULT_TOKENIZER,
) -> list[Chunk]:
    """Chunk every resolved document; unresolved ones are skipped."""
    chunks: list[Chunk] = []
    for doc in documents:
        if doc.resolved:
            chunks.extend(chunk_document(doc, max_tokens, tokenizer))
    return chunks


def save_chunks(chunks: list[Chunk], path: str | Path) -> None:
    """Append-only JSON-lines chunk store, one record per chunk."""
    with open(path, "w", encoding="utf-8") as fh:
        for chunk in chunks:
            fh.write(
                json.dumps(
                    {
                        "chunk_id": chunk.chunk_id,
                        "doc_id": chunk.doc_id,
                        "ordinal": chunk.ordinal,
                        "token_count": chunk.token_count,
                        "text": chunk.text,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_chunks(path: str | Path) -> list[Chunk]:
    chunks = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            chunks.append(
                Chunk(
                    chunk_id=rec["chunk_id"],
                    doc_id=rec["doc_id"],
                    ordinal=rec["ordinal"],
                    text=rec["text"],
                    token_count=rec["token_count"],
                )
            )
    return chunks
