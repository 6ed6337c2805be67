"""Reference image suggestion: captions, embedding index, coarse retrieval, re-rank.

Gallery entries (pre-computed descriptions, object lists, metadata, people
counts) are rendered into a fixed caption template, embedded by a pluggable
text embedder, and stored in an immutable cosine-similarity index.  A query
first retrieves the top m captions by cosine similarity, then a pluggable
ranker narrows them to m* suggestions with a free-text explanation.  The
two-stage design is load-bearing: the ranker accepts at most m captions per
request.

Bundled test doubles: a hashed bag-of-words embedder and a keyword-overlap
ranker, both deterministic.  An HTTP ranker adapter covers real services.
"""

from __future__ import annotations

import json
import re
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np
import requests


class EmbedderFailure(Exception):
    """The embedder failed on a gallery entry; carries the offending id."""

    def __init__(self, entry_id: str, cause: Exception):
        super().__init__(f"embedding failed for entry {entry_id!r}: {cause}")
        self.entry_id = entry_id


class EmptyIndex(Exception):
    """Retrieval against an index with no entries."""


class RankerProtocolError(Exception):
    """The ranker returned ids outside the candidate set or a wrong count."""


class RankerUnavailable(Exception):
    """Transport-level ranker failure (connection, timeout, bad status)."""


@dataclass(frozen=True)
class GalleryEntry:
    id: str
    description: str
    objects: tuple[str, ...]
    metadata: str
    people_count: int
    image_path: str

    def __post_init__(self):
        if self.people_count < 0:
            raise ValueError("people count must be non-negative")


@dataclass(frozen=True)
class UserPrompt:
    query: str
    detected_objects: tuple[str, ...] = ()
    people_count: int | None = None

    def __post_init__(self):
        if not self.query:
            raise ValueError("query must be non-empty")


@dataclass(frozen=True)
class RetrievalConfig:
    m: int = 16
    m_star: int = 3

    def __post_init__(self):
        if not 1 <= self.m_star <= self.m:
            raise ValueError("need 1 <= m_star <= m")


def _or_none(text: str) -> str:
    return text if text else "none"


def build_caption(entry: GalleryEntry) -> str:
    """Single-caption rendering of one gallery entry; empty fields print 'none'."""
    objects = ", ".join(entry.objects) if entry.objects else "none"
    return (
        f"Description: {_or_none(entry.description)}. "
        f"Objects: {objects}. "
        f"Metadata: {_or_none(entry.metadata)}. "
        f"People: {entry.people_count}."
    )


def prompt_text(prompt: UserPrompt) -> str:
    """Textual form of the user prompt, mirroring the caption template."""
    objects = ", ".join(prompt.detected_objects) if prompt.detected_objects else "none"
    people = "none" if prompt.people_count is None else str(prompt.people_count)
    return f"Query: {prompt.query}. Objects: {objects}. People: {people}."


class TextEmbedder(Protocol):
    def embed(self, text: str) -> np.ndarray: ...

    @property
    def tag(self) -> str: ...


_TOKEN_RE = re.compile(r"[a-z0-9]+")


def _tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class HashedBagOfWordsEmbedder:
    """Deterministic stand-in for a sentence encoder.

    Tokens hash (crc32, stable across platforms) into a signed bag-of-words
    vector that is then unit-normalized.  Text with no tokens maps to a fixed
    basis vector so the output is always unit length.
    """

    def __init__(self, dim: int = 256):
        self.dim = dim

    @property
    def tag(self) -> str:
        return f"hashed-bow-{self.dim}"

    def embed(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim)
        for tok in _tokens(text):
            h = zlib.crc32(tok.encode("utf-8"))
            sign = 1.0 if (h >> 16) & 1 else -1.0
            v[h % self.dim] += sign
        norm = np.linalg.norm(v)
        if norm == 0:
            v[0] = 1.0
            return v
        return v / norm


@dataclass(frozen=True)
class EmbeddingIndex:
    """Immutable id -> unit-embedding store with the captions alongside."""

    ids: tuple[str, ...]
    captions: tuple[str, ...]
    embeddings: np.ndarray
    embedder: TextEmbedder
    embedder_tag: str

    def __post_init__(self):
        emb = np.asarray(self.embeddings, dtype=float)
        emb.setflags(write=False)
        object.__setattr__(self, "embeddings", emb)

    def __len__(self) -> int:
        return len(self.ids)

    def caption_of(self, entry_id: str) -> str:
        return self.captions[self.ids.index(entry_id)]


def index_gallery(entries: list[GalleryEntry], embedder: TextEmbedder) -> EmbeddingIndex:
    """Embed every entry caption; rejects duplicate ids, wraps embedder errors."""
    seen: set[str] = set()
    for e in entries:
        if e.id in seen:
            raise ValueError(f"duplicate gallery id {e.id!r}")
        seen.add(e.id)

    vectors = []
    captions = []
    dim = None
    for e in entries:
        caption = build_caption(e)
        try:
            v = np.asarray(embedder.embed(caption), dtype=float).reshape(-1)
        except Exception as exc:  # noqa: BLE001 - adapter boundary
            raise EmbedderFailure(e.id, exc) from exc
        if dim is None:
            dim = len(v)
        elif len(v) != dim:
            raise EmbedderFailure(e.id, ValueError(f"dimension {len(v)} != {dim}"))
        norm = np.linalg.norm(v)
        if norm > 0:
            v = v / norm
        vectors.append(v)
        captions.append(caption)

    matrix = np.stack(vectors) if vectors else np.zeros((0, dim or 0))
    return EmbeddingIndex(
        ids=tuple(e.id for e in entries),
        captions=tuple(captions),
        embeddings=matrix,
        embedder=embedder,
        embedder_tag=getattr(embedder, "tag", "custom"),
    )


def coarse_retrieve(
    prompt: UserPrompt, index: EmbeddingIndex, cfg: RetrievalConfig = RetrievalConfig()
) -> list[tuple[str, float]]:
    """Exact top-m entries by cosine similarity, descending; ties break by id."""
    if len(index) == 0:
        raise EmptyIndex("cannot retrieve from an empty index")
    q = np.asarray(index.embedder.embed(prompt_text(prompt)), dtype=float).reshape(-1)
    norm = np.linalg.norm(q)
    if norm > 0:
        q = q / norm
    sims = index.embeddings @ q
    ranked = sorted(zip(index.ids, sims), key=lambda pair: (-pair[1], pair[0]))
    return [(eid, float(s)) for eid, s in ranked[: min(cfg.m, len(index))]]


class CaptionRanker(Protocol):
    def rank(
        self, prompt: str, candidates: list[tuple[str, str]], m_star: int
    ) -> tuple[list[str], str]: ...


class KeywordOverlapRanker:
    """Deterministic mock ranker: score by shared tokens, ties by id."""

    def rank(
        self, prompt: str, candidates: list[tuple[str, str]], m_star: int
    ) -> tuple[list[str], str]:
        prompt_tokens = set(_tokens(prompt))
        scored = sorted(
            candidates,
            key=lambda c: (-len(prompt_tokens & set(_tokens(c[1]))), c[0]),
        )
        chosen = scored[:m_star]
        parts = [
            f"{eid}: {len(prompt_tokens & set(_tokens(caption)))} shared terms"
            for eid, caption in chosen
        ]
        return [eid for eid, _ in chosen], "keyword overlap ranking (" + "; ".join(parts) + ")"


@dataclass
class HttpRanker:
    """Adapter for an HTTP ranking service.

    POSTs ``{"prompt", "candidates": [{"id", "caption"}], "m_star"}`` and
    expects ``{"ids": [...], "explanation": "..."}`` back.  Transport problems
    raise :class:`RankerUnavailable`; malformed bodies raise
    :class:`RankerProtocolError`.  Retrying is the caller's job.
    """

    url: str
    api_key: str = ""
    timeout: float = 10.0

    def rank(
        self, prompt: str, candidates: list[tuple[str, str]], m_star: int
    ) -> tuple[list[str], str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {
            "prompt": prompt,
            "candidates": [{"id": eid, "caption": caption} for eid, caption in candidates],
            "m_star": m_star,
        }
        try:
            resp = requests.post(self.url, json=payload, headers=headers, timeout=self.timeout)
        except requests.RequestException as exc:
            raise RankerUnavailable(f"ranker request failed: {exc}") from exc
        if resp.status_code != 200:
            raise RankerUnavailable(f"ranker returned HTTP {resp.status_code}")
        try:
            body = resp.json()
            ids = list(body["ids"])
            explanation = str(body.get("explanation", ""))
        except (ValueError, KeyError, TypeError) as exc:
            raise RankerProtocolError(f"malformed ranker response: {exc}") from exc
        return ids, explanation


@dataclass(frozen=True)
class RerankResult:
    ids: tuple[str, ...]
    explanation: str


def rerank(
    prompt: UserPrompt,
    candidates: list[tuple[str, str]],
    ranker: CaptionRanker,
    cfg: RetrievalConfig = RetrievalConfig(),
    retries: int = 1,
) -> RerankResult:
    """Narrow coarse candidates to m* ids in ranker order, with explanation.

    The candidate list must respect the coarse budget (at most m).  A ranker
    that violates the protocol (unknown ids, duplicates, wrong count) or is
    unreachable gets ``retries`` further attempts (one by default) before
    the error propagates.
    """
    if not candidates:
        raise ValueError("rerank needs at least one candidate")
    if len(candidates) > cfg.m:
        raise ValueError(f"at most m={cfg.m} captions per ranker request, got {len(candidates)}")
    m_star = min(cfg.m_star, len(candidates))
    candidate_ids = {eid for eid, _ in candidates}

    text = prompt_text(prompt)
    last_error: Exception | None = None
    for _ in range(1 + max(retries, 0)):
        try:
            ids, explanation = ranker.rank(text, list(candidates), m_star)
        except RankerUnavailable as exc:
            last_error = exc
            continue
        except RankerProtocolError as exc:
            last_error = exc
            continue
        if (
            len(ids) == m_star
            and len(set(ids)) == len(ids)
            and all(eid in candidate_ids for eid in ids)
        ):
            return RerankResult(ids=tuple(ids), explanation=explanation)
        last_error = RankerProtocolError(
            f"ranker returned {ids!r}, expected {m_star} distinct candidate ids"
        )
    if isinstance(last_error, RankerUnavailable):
        raise last_error
    raise RankerProtocolError(str(last_error))


def suggest(
    prompt: UserPrompt,
    index: EmbeddingIndex,
    ranker: CaptionRanker,
    cfg: RetrievalConfig = RetrievalConfig(),
) -> RerankResult:
    """Full pipeline: coarse cosine retrieval, then re-rank to m* suggestions."""
    coarse = coarse_retrieve(prompt, index, cfg)
    candidates = [(eid, index.caption_of(eid)) for eid, _ in coarse]
    return rerank(prompt, candidates, ranker, cfg)


# --- gallery manifest and index files -------------------------------------------

_REQUIRED_FIELDS = ("id", "description", "objects", "metadata", "people_count", "image_path")


def parse_manifest(path: str | Path) -> list[GalleryEntry]:
    """Read a JSON-lines gallery manifest, one entry object per line."""
    entries = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON record: {exc}") from exc
            missing = [k for k in _REQUIRED_FIELDS if k not in record]
            if missing:
                rid = record.get("id", f"line {lineno}")
                raise ValueError(f"{path}: record {rid!r} is missing fields {missing}")
            try:
                entries.append(
                    GalleryEntry(
                        id=str(record["id"]),
                        description=str(record["description"]),
                        objects=tuple(str(o) for o in record["objects"]),
                        metadata=str(record["metadata"]),
                        people_count=int(record["people_count"]),
                        image_path=str(record["image_path"]),
                    )
                )
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}: record {record.get('id')!r} is malformed: {exc}") from exc
    return entries


def save_index(index: EmbeddingIndex, path: str | Path) -> None:
    np.savez(
        path,
        ids=np.array(index.ids, dtype=object),
        captions=np.array(index.captions, dtype=object),
        embeddings=index.embeddings,
        embedder_tag=np.array(index.embedder_tag),
    )


def load_index(path: str | Path, embedder: TextEmbedder | None = None) -> EmbeddingIndex:
    """Load a saved index; the bundled embedder is reconstructed from its tag."""
    data = np.load(path, allow_pickle=True)
    tag = str(data["embedder_tag"])
    if embedder is None:
        match = re.fullmatch(r"hashed-bow-(\d+)", tag)
        if not match:
            raise ValueError(f"index was built with embedder {tag!r}; pass it explicitly")
        embedder = HashedBagOfWordsEmbedder(dim=int(match.group(1)))
    return EmbeddingIndex(
        ids=tuple(str(i) for i in data["ids"]),
        captions=tuple(str(c) for c in data["captions"]),
        embeddings=np.asarray(data["embeddings"], dtype=float),
        embedder=embedder,
        embedder_tag=tag,
    )
