"""Reference corpus construction.

Given a target paper, pull its direct references and the references of those
references, rank the second layer by how many direct references cite each
paper (recency breaks ties), truncate to a capacity, and resolve full texts
into an on-disk document store.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from datetime import date
from pathlib import Path
from typing import Protocol

import requests

from .errors import CapacityTooSmall, ProviderUnavailable, TargetNotFound

logger = logging.getLogger(__name__)

ORDER_TARGET = "target"
ORDER_FIRST = "first"
ORDER_SECOND = "second"

INGEST_RESOLVED = "resolved"
INGEST_TEXT_MISSING = "text_missing"
INGEST_EXTRACTION_FAILED = "extraction_failed"


@dataclass(frozen=True)
class PaperMeta:
    """Metadata for one paper in the corpus."""

    id: str
    title: str
    publication_date: date | None = None
    order: str = ORDER_FIRST
    cited_by_first_order: int = 0
    source_url: str | None = None

    @property
    def display_name(self) -> str:
        """Name used in citation markers and the references section."""
        return f"{self.id}_{self.title}"


@dataclass
class Document:
    """One corpus paper with raw and cleaned text."""

    meta: PaperMeta
    raw_text: str = ""
    cleaned_text: str = ""
    ingest_status: str = INGEST_TEXT_MISSING

    @property
    def resolved(self) -> bool:
        return self.ingest_status == INGEST_RESOLVED


@dataclass
class CorpusManifest:
    """Ordered corpus listing: first-order entries, then ranked second-order."""

    target_id: str
    entries: list[PaperMeta]
    capacity: int

    def doc_ids(self) -> list[str]:
        return [m.id for m in self.entries]


class ScholarlyProvider(Protocol):
    """Metadata source for papers and their reference lists."""

    def resolve(self, id_or_title: str) -> PaperMeta:
        """Return metadata for a paper id or title. Raises TargetNotFound."""
        ...

    def references(self, paper_id: str) -> list[PaperMeta]:
        """Return direct references of a paper, in the provider's order."""
        ...


class TextSource(Protocol):
    """Full-text source for corpus papers."""

    def get_text(self, meta: PaperMeta) -> str | None:
        """Return raw text for a paper, or None when no text exists."""
        ...


def _parse_date(value) -> date | None:
    if value in (None, ""):
        return None
    if isinstance(value, date):
        return value
    return date.fromisoformat(str(value))


class OfflineDirProvider:
    """Reads paper metadata and texts from a local directory.

    Layout::

        <root>/papers/<id>.json   {"id", "title", "publication_date",
                                   "references": [ids...]}
        <root>/texts/<id>.txt     raw full text (optional per paper)

    Lets tests and offline runs exercise the full corpus path without
    touching the network.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._papers_dir = self.root / "papers"
        self._texts_dir = self.root / "texts"
        if not self._papers_dir.is_dir():
            raise ProviderUnavailable(f"no papers/ directory under {self.root}")

    def _load(self, paper_id: str) -> dict | None:
        path = self._papers_dir / f"{paper_id}.json"
        if not path.is_file():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def _meta(self, record: dict, order: str = ORDER_FIRST) -> PaperMeta:
        return PaperMeta(
            id=record["id"],
            title=record["title"],
            publication_date=_parse_date(record.get("publication_date")),
            order=order,
            source_url=record.get("source_url"),
        )

    def resolve(self, id_or_title: str) -> PaperMeta:
        record = self._load(id_or_title)
        if record is not None:
            return self._meta(record, ORDER_TARGET)
        wanted = id_or_title.casefold()
        for path in sorted(self._papers_dir.glob("*.json")):
            record = json.loads(path.read_text(encoding="utf-8"))
            if record.get("title", "").casefold() == wanted:
                return self._meta(record, ORDER_TARGET)
        raise TargetNotFound(f"no paper matching {id_or_title!r} under {self.root}")

    def references(self, paper_id: str) -> list[PaperMeta]:
        record = self._load(paper_id)
        if record is None:
            return []
        refs = []
        for ref_id in record.get("references", []):
            ref = self._load(ref_id)
            if ref is not None:
                refs.append(self._meta(ref))
        return refs

    def get_text(self, meta: PaperMeta) -> str | None:
        path = self._texts_dir / f"{meta.id}.txt"
        if not path.is_file():
            return None
        return path.read_text(encoding="utf-8")


class HttpScholarlyProvider:
    """JSON-over-HTTP metadata source.

    Expected endpoints (documented in the README):

    - ``GET <base>/papers/<id>`` -> paper record
    - ``GET <base>/papers?title=<q>`` -> {"matches": [record, ...]}
    - ``GET <base>/papers/<id>/references`` -> {"references": [record, ...]}

    where a record carries ``id``, ``title``, ``publication_date`` and
    optionally ``source_url``.
    """

    def __init__(self, base_url: str, session: requests.Session | None = None,
                 timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.session = session or requests.Session()
        self.timeout = timeout

    def _get(self, path: str, **params) -> dict:
        url = f"{self.base_url}{path}"
        try:
            resp = self.session.get(url, params=params or None, timeout=self.timeout)
        except requests.RequestException as exc:
            raise ProviderUnavailable(f"GET {url} failed: {exc}") from exc
        if resp.status_code == 404:
            raise TargetNotFound(f"GET {url} -> 404")
        if resp.status_code >= 400:
            raise ProviderUnavailable(f"GET {url} -> {resp.status_code}")
        return resp.json()

    def _meta(self, record: dict, order: str = ORDER_FIRST) -> PaperMeta:
        return PaperMeta(
            id=str(record["id"]),
            title=record["title"],
            publication_date=_parse_date(record.get("publication_date")),
            order=order,
            source_url=record.get("source_url"),
        )

    def resolve(self, id_or_title: str) -> PaperMeta:
        try:
            return self._meta(self._get(f"/papers/{id_or_title}"), ORDER_TARGET)
        except TargetNotFound:
            pass
        payload = self._get("/papers", title=id_or_title)
        matches = payload.get("matches", [])
        if not matches:
            raise TargetNotFound(f"no paper titled {id_or_title!r}")
        return self._meta(matches[0], ORDER_TARGET)

    def references(self, paper_id: str) -> list[PaperMeta]:
        payload = self._get(f"/papers/{paper_id}/references")
        return [self._meta(rec) for rec in payload.get("references", [])]


class UrlTextSource:
    """Fetches raw full text from each paper's ``source_url``.

    Expects plain-text responses; PDFs need a separate extraction step
    upstream. Papers without a URL resolve to no text.
    """

    def __init__(self, session: requests.Session | None = None,
                 timeout: float = 60.0):
        self.session = session or requests.Session()
        self.timeout = timeout

    def get_text(self, meta: PaperMeta) -> str | None:
        if not meta.source_url:
            return None
        resp = self.session.get(meta.source_url, timeout=self.timeout)
        if resp.status_code >= 400:
            logger.warning("GET %s -> %d for %s", meta.source_url,
                           resp.status_code, meta.id)
            return None
        return resp.text


def _dedup_key(meta: PaperMeta) -> str:
    # Provider ids are authoritative; title equality is the fallback for
    # providers that omit stable ids.
    return meta.id if meta.id else meta.title.casefold()


def fetch_reference_set(
    target: PaperMeta, provider: ScholarlyProvider
) -> tuple[list[PaperMeta], list[PaperMeta]]:
    """Collect the two-layer reference set of ``target``.

    First layer: direct references. Second layer: references of those
    references, each annotated with the number of distinct first-layer papers
    citing it. A paper present in both layers is kept only in the first; the
    target itself is excluded everywhere.
    """
    target_key = _dedup_key(target)
    first_order: list[PaperMeta] = []
    first_keys: set[str] = set()
    for ref in provider.references(target.id):
        key = _dedup_key(ref)
        if key == target_key or key in first_keys:
            continue
        first_keys.add(key)
        first_order.append(replace(ref, order=ORDER_FIRST))

    # Count distinct first-order citers per second-order paper, keeping the
    # first-encountered metadata so fetch order stays the tiebreaker.
    second_by_key: dict[str, PaperMeta] = {}
    citers: dict[str, set[str]] = {}
    for parent in first_order:
        for ref in provider.references(parent.id):
            key = _dedup_key(ref)
            if key == target_key or key in first_keys:
                continue
            if key not in second_by_key:
                second_by_key[key] = ref
                citers[key] = set()
            citers[key].add(_dedup_key(parent))

    second_order = [
        replace(meta, order=ORDER_SECOND, cited_by_first_order=len(citers[key]))
        for key, meta in second_by_key.items()
    ]
    return first_order, second_order


def rank_and_truncate(
    first_order: list[PaperMeta],
    second_order: list[PaperMeta],
    capacity: int,
    target_id: str = "",
) -> CorpusManifest:
    """Keep all first-order entries, then the best second-order entries.

    Second-order papers are ordered by citation count from the first layer
    (descending), then publication date (descending, undated last); remaining
    ties keep fetch order. The list is cut at ``capacity``.
    """
    if capacity < len(first_order):
        raise CapacityTooSmall(
            f"capacity {capacity} < {len(first_order)} first-order references"
        )

    def sort_key(meta: PaperMeta):
        dated = meta.publication_date is not None
        ordinal = meta.publication_date.toordinal() if dated else 0
        return (-meta.cited_by_first_order, 0 if dated else 1, -ordinal)

    ranked = sorted(second_order, key=sort_key)  # stable: fetch order on ties
    room = capacity - len(first_order)
    entries = list(first_order) + ranked[:room]
    return CorpusManifest(target_id=target_id, entries=entries, capacity=capacity)


def resolve_full_texts(
    manifest: CorpusManifest,
    extractor: TextSource,
    clean=None,
) -> list[Document]:
    """Fetch and clean full text for every manifest entry.

    Per-paper failures are recorded in ``ingest_status`` and never abort the
    batch; unresolved documents stay in the manifest but are skipped at
    indexing time.
    """
    if clean is None:
        from .ingest import clean_text as clean

    documents = []
    for meta in manifest.entries:
        doc = Document(meta=meta)
        try:
            raw = extractor.get_text(meta)
        except Exception as exc:  # noqa: BLE001 - isolate per-document failures
            logger.warning("text extraction failed for %s: %s", meta.id, exc)
            doc.ingest_status = INGEST_EXTRACTION_FAILED
            documents.append(doc)
            continue
        if raw is None or not raw.strip():
            doc.ingest_status = INGEST_TEXT_MISSING
            documents.append(doc)
            continue
        doc.raw_text = raw
        doc.cleaned_text = clean(raw)
        if doc.cleaned_text.strip():
            doc.ingest_status = INGEST_RESOLVED
        else:
            doc.ingest_status = INGEST_EXTRACTION_FAILED
        documents.append(doc)
    return documents


# --- on-disk document store -------------------------------------------------

def _meta_record(meta: PaperMeta) -> dict:
    return {
        "id": meta.id,
        "title": meta.title,
        "date": meta.publication_date.isoformat() if meta.publication_date else None,
        "order": meta.order,
        "cited_by_first_order": meta.cited_by_first_order,
        "source_url": meta.source_url,
    }


def _meta_from_record(record: dict) -> PaperMeta:
    return PaperMeta(
        id=record["id"],
        title=record["title"],
        publication_date=_parse_date(record.get("date")),
        order=record.get("order", ORDER_FIRST),
        cited_by_first_order=record.get("cited_by_first_order", 0),
        source_url=record.get("source_url"),
    )


def save_manifest(manifest: CorpusManifest, path: str | Path) -> None:
    payload = {
        "target_id": manifest.target_id,
        "capacity": manifest.capacity,
        "entries": [_meta_record(m) for m in manifest.entries],
    }
    Path(path).write_text(
        json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )


def load_manifest(path: str | Path) -> CorpusManifest:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return CorpusManifest(
        target_id=payload["target_id"],
        capacity=payload["capacity"],
        entries=[_meta_from_record(r) for r in payload["entries"]],
    )


def save_documents(documents: list[Document], store_dir: str | Path) -> None:
    """Write one JSON record per document into ``store_dir``."""
    store = Path(store_dir)
    store.mkdir(parents=True, exist_ok=True)
    for doc in documents:
        record = _meta_record(doc.meta)
        record["raw_text"] = doc.raw_text
        record["cleaned_text"] = doc.cleaned_text
        record["ingest_status"] = doc.ingest_status
        path = store / f"{doc.meta.id}.json"
        path.write_text(
            json.dumps(record, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
        )


def load_documents(store_dir: str | Path) -> list[Document]:
    documents = []
    for path in sorted(Path(store_dir).glob("*.json")):
        record = json.loads(path.read_text(encoding="utf-8"))
        # A store may hold sidecar files (failure lists, manifests); only
        # dicts with an "id" are document records.
        if not isinstance(record, dict) or "id" not in record:
            continue
        documents.append(
            Document(
                meta=_meta_from_record(record),
                raw_text=record.get("raw_text", ""),
                cleaned_text=record.get("cleaned_text", ""),
                ingest_status=record.get("ingest_status", INGEST_TEXT_MISSING),
            )
        )
    return documents
