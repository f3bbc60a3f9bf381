"""Contextual chunking: document prefix + heading path + sliding body windows.

Every chunk carries three nested levels of context: a short prefix taken from
the start of the document (global context), the Markdown heading path above
the chunk body (section context), and the body itself. Bodies are sliding
token windows that never straddle a heading change, so the heading path is
truthful for the whole body.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from sklearn.base import BaseEstimator, TransformerMixin

from .corpus import Document, token_texts
from .errors import ConfigError, ParseError, ValidationError

_HEADING_RE = re.compile(r"^(#{1,6})\s+(.*?)\s*$")


@dataclass(frozen=True)
class ChunkConfig:
    """Token budgets for chunk construction.

    The body window for a heading segment is ``max_tokens - prefix_tokens -
    tokens(heading line)``; the prefix must leave at least 64 body tokens
    even before any heading is charged.
    """

    max_tokens: int = 512
    overlap_tokens: int = 64
    prefix_tokens: int = 128

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ConfigError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if self.overlap_tokens < 0:
            raise ConfigError(f"overlap_tokens must be >= 0, got {self.overlap_tokens}")
        if self.prefix_tokens < 0:
            raise ConfigError(f"prefix_tokens must be >= 0, got {self.prefix_tokens}")
        if self.prefix_tokens >= self.max_tokens:
            raise ConfigError(
                f"prefix_tokens ({self.prefix_tokens}) must be smaller than "
                f"max_tokens ({self.max_tokens})"
            )
        window = self.max_tokens - self.prefix_tokens
        if window < 64:
            raise ConfigError(
                f"body window ({window} tokens) too small; max_tokens - "
                f"prefix_tokens must be >= 64"
            )
        if self.overlap_tokens >= window:
            raise ConfigError(
                f"overlap_tokens ({self.overlap_tokens}) must be smaller than "
                f"the body window ({window})"
            )


@dataclass(frozen=True)
class Chunk:
    """One retrieval unit with (doc, page) provenance.

    ``body_token_span`` is the half-open token-index range of the body in
    the document's body-token stream (heading lines excluded). ``page_no``
    is the page on which the body's first token sits.
    """

    chunk_id: str
    doc_id: str
    page_no: int
    doc_prefix: str
    heading_path: tuple[str, ...]
    body: str
    body_token_span: tuple[int, int]

    def __post_init__(self):
        if not self.body:
            raise ValidationError(f"chunk {self.chunk_id!r} has an empty body")
        object.__setattr__(self, "heading_path", tuple(self.heading_path))
        object.__setattr__(self, "body_token_span", tuple(self.body_token_span))


def heading_line(path: Sequence[str]) -> str:
    return " > ".join(path)


def render_chunk(chunk: Chunk) -> str:
    """Render prefix, heading path, and body as blank-line-separated blocks."""
    parts = [chunk.doc_prefix, heading_line(chunk.heading_path), chunk.body]
    return "\n\n".join(p for p in parts if p)


def extract_prefix(doc: Document, prefix_tokens: int) -> str:
    """First ``prefix_tokens`` tokens of page 1, heading markers stripped.

    Tokens are re-joined with single spaces, so the prefix token count is
    exact under the module tokenizer.
    """
    if prefix_tokens <= 0:
        return ""
    lines = []
    for line in doc.pages[0].markdown.splitlines():
        m = _HEADING_RE.match(line)
        lines.append(m.group(2) if m else line)
    tokens = token_texts("\n".join(lines))
    return " ".join(tokens[:prefix_tokens])


def build_chunks(doc: Document, cfg: ChunkConfig | None = None) -> list[Chunk]:
    """Chunk one document into contextual sliding windows.

    Pages are walked in order while tracking the Markdown heading stack
    (a level-``n`` heading truncates the stack to depth ``n-1`` and pushes).
    Each heading segment is windowed independently: windows are ``W`` body
    tokens wide with step ``W - overlap_tokens``, where ``W`` subtracts the
    prefix budget and the rendered heading line from ``max_tokens``. The
    final window of a segment is clipped at the segment end. Raises
    ConfigError when a heading path leaves no room for the window to
    advance.
    """
    cfg = cfg or ChunkConfig()
    prefix = extract_prefix(doc, cfg.prefix_tokens)

    chunks: list[Chunk] = []
    path: list[str] = []
    # Body tokens of the current segment as (text, page_no); stream_base is
    # the document-level token index of the segment's first token.
    segment: list[tuple[str, int]] = []
    stream_base = 0

    def flush():
        nonlocal stream_base
        if not segment:
            return
        line = heading_line(path)
        heading_cost = len(token_texts(line))
        window = cfg.max_tokens - cfg.prefix_tokens - heading_cost
        if window <= cfg.overlap_tokens:
            raise ConfigError(
                f"document {doc.doc_id!r}: heading path {line!r} leaves a "
                f"{window}-token window, not above the {cfg.overlap_tokens}-token overlap"
            )
        step = window - cfg.overlap_tokens
        n = len(segment)
        start = 0
        while True:
            end = min(start + window, n)
            body_tokens = segment[start:end]
            chunks.append(
                Chunk(
                    chunk_id=f"{doc.doc_id}#{len(chunks):04d}",
                    doc_id=doc.doc_id,
                    page_no=body_tokens[0][1],
                    doc_prefix=prefix,
                    heading_path=tuple(path),
                    body=" ".join(t for t, _ in body_tokens),
                    body_token_span=(stream_base + start, stream_base + end),
                )
            )
            if end >= n:
                break
            start += step
        stream_base += n
        segment.clear()

    for page in doc.pages:
        for line in page.markdown.splitlines():
            m = _HEADING_RE.match(line)
            if m:
                flush()
                level = len(m.group(1))
                del path[level - 1 :]
                path.append(m.group(2))
            else:
                for text in token_texts(line):
                    segment.append((text, page.page_no))
    flush()
    return chunks


def build_chunk_store(chunks: Iterable[Chunk]) -> dict[str, Chunk]:
    """Index chunks by chunk_id for stage-to-stage resolution."""
    store: dict[str, Chunk] = {}
    for chunk in chunks:
        if chunk.chunk_id in store:
            raise ValidationError(f"duplicate chunk_id {chunk.chunk_id!r}")
        store[chunk.chunk_id] = chunk
    return store


class ContextualChunker(TransformerMixin, BaseEstimator):
    """Estimator-style wrapper over :func:`build_chunks`.

    Stateless: ``fit`` only validates the budgets, ``transform`` maps a list
    of documents to the concatenated chunk list in document order.
    """

    def __init__(self, max_tokens: int = 512, overlap_tokens: int = 64, prefix_tokens: int = 128):
        self.max_tokens = max_tokens
        self.overlap_tokens = overlap_tokens
        self.prefix_tokens = prefix_tokens

    @property
    def config(self) -> ChunkConfig:
        return ChunkConfig(
            max_tokens=self.max_tokens,
            overlap_tokens=self.overlap_tokens,
            prefix_tokens=self.prefix_tokens,
        )

    def fit(self, X: Sequence[Document], y=None):
        self.config  # raises ConfigError on bad budgets
        return self

    def transform(self, X: Sequence[Document]) -> list[Chunk]:
        cfg = self.config
        out: list[Chunk] = []
        for doc in X:
            out.extend(build_chunks(doc, cfg))
        return out


def save_chunks(chunks: Iterable[Chunk], path: str | Path) -> None:
    """Dump chunks as line-delimited JSON for inspection or caching."""
    with open(path, "w", encoding="utf-8") as handle:
        for c in chunks:
            record = {
                "chunk_id": c.chunk_id,
                "doc_id": c.doc_id,
                "page_no": c.page_no,
                "doc_prefix": c.doc_prefix,
                "heading_path": list(c.heading_path),
                "body": c.body,
                "body_token_span": list(c.body_token_span),
            }
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")


def load_chunks(path: str | Path) -> list[Chunk]:
    path = Path(path)
    chunks: list[Chunk] = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                chunks.append(
                    Chunk(
                        chunk_id=record["chunk_id"],
                        doc_id=record["doc_id"],
                        page_no=record["page_no"],
                        doc_prefix=record["doc_prefix"],
                        heading_path=tuple(record["heading_path"]),
                        body=record["body"],
                        body_token_span=tuple(record["body_token_span"]),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"{path}:{line_no}: bad chunk record: {exc}") from exc
    return chunks
