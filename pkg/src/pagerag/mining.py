"""Hard-negative mining for retriever/reranker training pairs.

Negatives come in four categories: cross-document retrieval errors,
same-document wrong-page passages, passages that contain a wrong answer
option verbatim, and externally-flagged impossible questions. The first
three are mined from a question's reranked candidate list; the fourth is
input-driven and never synthesized here.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .chunking import Chunk, render_chunk
from .corpus import MCQuestion
from .errors import ConfigError, MissingChunk, ParseError, ValidationError
from .rerank import build_rerank_query
from .retrieval import RankedCandidate

logger = logging.getLogger(__name__)


class NegativeCategory(str, Enum):
    WRONG_OPTION = "wrong_option"
    SAME_DOC_WRONG_PAGE = "same_doc_wrong_page"
    DENSE_ERROR = "dense_error"
    IMPOSSIBLE_QUESTION = "impossible_question"


@dataclass(frozen=True)
class TrainingPair:
    """One contrastive row: query, optional positive, categorized negatives."""

    query: str
    positive: str | None
    negatives: tuple[tuple[str, NegativeCategory], ...]

    def __post_init__(self):
        if not self.negatives:
            raise ValidationError("training pair must have at least one negative")
        negative_ids = [cid for cid, _ in self.negatives]
        if len(set(negative_ids)) != len(negative_ids):
            raise ValidationError("training pair has duplicate negatives")
        if self.positive is not None and self.positive in negative_ids:
            raise ValidationError(
                f"chunk {self.positive!r} appears as both positive and negative"
            )
        if self.positive is None:
            for _, category in self.negatives:
                if category is not NegativeCategory.IMPOSSIBLE_QUESTION:
                    raise ValidationError(
                        "pairs without a positive are only valid for "
                        "impossible-question rows"
                    )
        object.__setattr__(self, "negatives", tuple(self.negatives))


def _gold_page_chunk(chunks: Mapping[str, Chunk], gold_doc: str, gold_page: int) -> str | None:
    matching = [
        cid for cid, c in chunks.items() if c.doc_id == gold_doc and c.page_no == gold_page
    ]
    return min(matching) if matching else None


def mine_negatives(
    q: MCQuestion,
    reranked: Sequence[RankedCandidate],
    chunks: Mapping[str, Chunk],
    per_category_cap: int = 3,
) -> TrainingPair | None:
    """Build one training pair from a question's reranked candidates.

    The positive is the best-ranked gold-page chunk, or any gold-page chunk
    fetched from the store when retrieval missed it entirely. Negatives are
    taken in priority order: cross-document chunks, same-document
    wrong-page chunks, then chunks containing a non-gold option verbatim,
    each capped per category and deduplicated. Returns None (logged) when
    the gold page produced no chunk at all or no negatives are available.
    """
    if per_category_cap < 1:
        raise ConfigError(f"per_category_cap must be >= 1, got {per_category_cap}")
    if q.gold_answer is None or q.gold_doc is None or q.gold_page is None:
        raise ValidationError(f"question {q.qid!r} lacks gold labels")
    if not reranked:
        raise ValidationError(f"question {q.qid!r} has no candidates to mine")

    ranked_chunks: list[tuple[RankedCandidate, Chunk]] = []
    for candidate in sorted(reranked, key=lambda c: c.rank):
        chunk = chunks.get(candidate.chunk_id)
        if chunk is None:
            raise MissingChunk(f"candidate references unknown chunk {candidate.chunk_id!r}")
        ranked_chunks.append((candidate, chunk))

    positive = next(
        (
            cand.chunk_id
            for cand, chunk in ranked_chunks
            if (chunk.doc_id, chunk.page_no) == (q.gold_doc, q.gold_page)
        ),
        None,
    )
    if positive is None:
        positive = _gold_page_chunk(chunks, q.gold_doc, q.gold_page)
    if positive is None:
        logger.info("question %s: gold page (%s, %s) produced no chunk, skipping",
                    q.qid, q.gold_doc, q.gold_page)
        return None

    taken: set[str] = {positive}
    negatives: list[tuple[str, NegativeCategory]] = []

    def take(category: NegativeCategory, wanted) -> None:
        count = 0
        for cand, chunk in ranked_chunks:
            if count >= per_category_cap:
                break
            if cand.chunk_id in taken or not wanted(chunk):
                continue
            negatives.append((cand.chunk_id, category))
            taken.add(cand.chunk_id)
            count += 1

    take(NegativeCategory.DENSE_ERROR, lambda chunk: chunk.doc_id != q.gold_doc)
    take(
        NegativeCategory.SAME_DOC_WRONG_PAGE,
        lambda chunk: chunk.doc_id == q.gold_doc and chunk.page_no != q.gold_page,
    )
    wrong_options = [text for letter, text in q.options.items() if letter != q.gold_answer]
    take(
        NegativeCategory.WRONG_OPTION,
        lambda chunk: any(option and option in chunk.body for option in wrong_options),
    )

    if not negatives:
        logger.info("question %s: no negatives available, skipping", q.qid)
        return None
    return TrainingPair(
        query=build_rerank_query(q), positive=positive, negatives=tuple(negatives)
    )


def mine_pairs(
    questions: Sequence[MCQuestion],
    reranked_by_qid: Mapping[str, Sequence[RankedCandidate]],
    chunks: Mapping[str, Chunk],
    per_category_cap: int = 3,
) -> tuple[list[TrainingPair], int]:
    """Mine every question; returns (pairs, skipped_count)."""
    pairs: list[TrainingPair] = []
    skipped = 0
    for q in questions:
        pair = mine_negatives(q, reranked_by_qid[q.qid], chunks, per_category_cap)
        if pair is None:
            skipped += 1
        else:
            pairs.append(pair)
    return pairs, skipped


def pair_record(pair: TrainingPair, chunks: Mapping[str, Chunk]) -> dict:
    """Resolve chunk ids to rendered texts for export."""

    def text_of(chunk_id: str) -> str:
        chunk = chunks.get(chunk_id)
        if chunk is None:
            raise MissingChunk(f"pair references unknown chunk {chunk_id!r}")
        return render_chunk(chunk)

    return {
        "query": pair.query,
        "positive_text": text_of(pair.positive) if pair.positive is not None else None,
        "negatives": [
            {"text": text_of(cid), "category": category.value}
            for cid, category in pair.negatives
        ],
    }


def export_pairs(
    pairs: Sequence[TrainingPair],
    chunks: Mapping[str, Chunk],
    path: str | Path,
) -> int:
    """Write pairs as line-delimited JSON; returns rows written."""
    written = 0
    with open(path, "w", encoding="utf-8") as handle:
        for pair in pairs:
            handle.write(json.dumps(pair_record(pair, chunks), ensure_ascii=False) + "\n")
            written += 1
    return written


def load_pair_records(path: str | Path) -> list[dict]:
    path = Path(path)
    records = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{line_no}: malformed pair record: {exc}") from exc
            for key in ("query", "positive_text", "negatives"):
                if key not in record:
                    raise ParseError(f"{path}:{line_no}: pair record missing {key!r}")
            records.append(record)
    return records


def category_counts(pairs: Iterable[TrainingPair]) -> Counter:
    """Negative counts per category, for the end-of-run stats block."""
    counts: Counter = Counter()
    for pair in pairs:
        for _, category in pair.negatives:
            counts[category.value] += 1
    return counts
