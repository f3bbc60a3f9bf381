"""First-stage candidate generation.

Dense retrieval is an exact cosine scan over every index entry (corpora here
are thousands of chunks, so exactness is cheap and removes recall noise).
Sparse scoring is Okapi BM25 over the same rendered chunk texts the dense
retriever sees, and the two can be combined with reciprocal rank fusion.
Ordering is always made canonical by breaking score ties on chunk_id.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from . import prompts
from .corpus import MCQuestion, token_texts
from .errors import (
    CacheCorrupt,
    CacheVersionMismatch,
    ConfigError,
    DimensionMismatch,
    ValidationError,
)

INDEX_FORMAT = "pagerag-index"
INDEX_VERSION = 1


class Stage(str, Enum):
    RETRIEVAL = "retrieval"
    FUSED = "fused"
    RERANKED = "reranked"


@dataclass(frozen=True)
class RankedCandidate:
    """One chunk with its score and 1-based rank within a result list."""

    chunk_id: str
    score: float
    rank: int
    stage: Stage


@dataclass(frozen=True)
class RetrievalConfig:
    top_k: int = 20
    fusion: str = "dense_only"  # or "rrf"
    rrf_k: float = 60.0
    bm25_k1: float = 1.2
    bm25_b: float = 0.75
    domain_mask: bool = False

    def __post_init__(self):
        if self.top_k < 1:
            raise ConfigError(f"top_k must be >= 1, got {self.top_k}")
        if self.fusion not in ("dense_only", "rrf"):
            raise ConfigError(f"fusion must be 'dense_only' or 'rrf', got {self.fusion!r}")
        if self.rrf_k <= 0:
            raise ConfigError(f"rrf_k must be > 0, got {self.rrf_k}")


def build_query(q: MCQuestion) -> str:
    """Dense retrieval query built from the full question instance."""
    return prompts.retrieval_query(q.question, q.options)


def build_lexical_query(q: MCQuestion) -> str:
    """Sparse-retrieval query: question plus options, no instruction line."""
    return f"{q.question}\n{prompts.format_choices(q.options)}"


def _ranked(scored: Iterable[tuple[str, float]], k: int, stage: Stage) -> list[RankedCandidate]:
    """Top-k of (chunk_id, score) with the canonical (-score, chunk_id) order."""
    ordered = sorted(scored, key=lambda item: (-item[1], item[0]))[:k]
    return [
        RankedCandidate(chunk_id=cid, score=float(score), rank=i + 1, stage=stage)
        for i, (cid, score) in enumerate(ordered)
    ]


class VectorIndex:
    """Immutable exact-search index over chunk embeddings."""

    def __init__(
        self,
        chunk_ids: Sequence[str],
        vectors: np.ndarray,
        doc_ids: Sequence[str],
        page_nos: Sequence[int],
        domains: Sequence[str | None],
    ):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise ValidationError("vectors must be a 2-D array")
        n = vectors.shape[0]
        if not (len(chunk_ids) == len(doc_ids) == len(page_nos) == len(domains) == n):
            raise ValidationError("index columns have mismatched lengths")
        if len(set(chunk_ids)) != n:
            raise ValidationError("chunk_ids must be unique")
        if n and not np.isfinite(vectors).all():
            raise ValidationError("index vectors must be finite")
        norms = np.linalg.norm(vectors, axis=1)
        if n and (norms == 0).any():
            raise ValidationError("index vectors must be non-zero")
        self.chunk_ids = tuple(chunk_ids)
        self.doc_ids = tuple(doc_ids)
        self.page_nos = tuple(int(p) for p in page_nos)
        self.domains = tuple(domains)
        self._unit = vectors / norms[:, None] if n else vectors
        # Numeric stand-in for lexicographic chunk_id tie-breaking.
        self._id_rank = np.empty(n, dtype=np.int64)
        self._id_rank[np.argsort(np.array(self.chunk_ids, dtype=object), kind="stable")] = np.arange(n)
        self._domain_arr = np.array(self.domains, dtype=object)
        self._row_of = {cid: i for i, cid in enumerate(self.chunk_ids)}

    @classmethod
    def from_entries(
        cls, entries: Iterable[tuple[str, np.ndarray, str, int, str | None]]
    ) -> "VectorIndex":
        rows = list(entries)
        if not rows:
            raise ValidationError("cannot build an empty index")
        chunk_ids, vectors, doc_ids, page_nos, domains = zip(*rows)
        return cls(chunk_ids, np.stack(vectors), doc_ids, page_nos, domains)

    @property
    def dimension(self) -> int:
        return self._unit.shape[1]

    def __len__(self) -> int:
        return self._unit.shape[0]

    def provenance(self, chunk_id: str) -> tuple[str, int]:
        i = self._row_of[chunk_id]
        return self.doc_ids[i], self.page_nos[i]

    def save(self, path: str | Path, extra_header: Mapping[str, str] | None = None) -> None:
        """Write header (version, dimension, count) plus per-entry records."""
        with open(path, "w", encoding="utf-8") as handle:
            header = {
                "format": INDEX_FORMAT,
                "version": INDEX_VERSION,
                "dimension": self.dimension,
                "count": len(self),
            }
            if extra_header:
                header.update(extra_header)
            handle.write(json.dumps(header, ensure_ascii=False) + "\n")
            for i, cid in enumerate(self.chunk_ids):
                record = {
                    "chunk_id": cid,
                    "doc_id": self.doc_ids[i],
                    "page_no": self.page_nos[i],
                    "domain": self.domains[i],
                    "vector": self._unit[i].tolist(),
                }
                handle.write(json.dumps(record, ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> tuple["VectorIndex", dict]:
        """Read an index cache; fails loudly on version or count mismatches."""
        path = Path(path)
        try:
            with open(path, encoding="utf-8") as handle:
                lines = handle.read().splitlines()
        except OSError as exc:
            raise CacheCorrupt(f"cannot read index cache {path}: {exc}") from exc
        if not lines:
            raise CacheCorrupt(f"index cache {path} is empty")
        try:
            header = json.loads(lines[0])
        except json.JSONDecodeError as exc:
            raise CacheCorrupt(f"index cache {path} has a bad header") from exc
        if header.get("format") != INDEX_FORMAT:
            raise CacheCorrupt(f"index cache {path} is not a {INDEX_FORMAT} file")
        if header.get("version") != INDEX_VERSION:
            raise CacheVersionMismatch(
                f"index cache {path} has version {header.get('version')}, "
                f"expected {INDEX_VERSION}"
            )
        entries = []
        try:
            for line in lines[1:]:
                if not line.strip():
                    continue
                r = json.loads(line)
                entries.append(
                    (
                        r["chunk_id"],
                        np.asarray(r["vector"], dtype=np.float64),
                        r["doc_id"],
                        r["page_no"],
                        r.get("domain"),
                    )
                )
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise CacheCorrupt(f"index cache {path} has a bad entry: {exc}") from exc
        if len(entries) != header.get("count"):
            raise CacheCorrupt(
                f"index cache {path} holds {len(entries)} entries, header says "
                f"{header.get('count')}"
            )
        index = cls.from_entries(entries)
        if index.dimension != header.get("dimension"):
            raise CacheCorrupt(f"index cache {path} dimension disagrees with header")
        return index, header


def dense_top_k(
    index: VectorIndex,
    query_vec: np.ndarray,
    k: int,
    domain: str | None = None,
) -> list[RankedCandidate]:
    """Exact cosine top-k over every eligible index entry.

    With ``domain`` given, entries tagged with a different domain have their
    scores forced to -inf before selection and can never be returned, so k
    is effectively capped at the eligible entry count.
    """
    query_vec = np.asarray(query_vec, dtype=np.float64)
    if query_vec.ndim != 1 or query_vec.shape[0] != index.dimension:
        raise DimensionMismatch(
            f"query has shape {query_vec.shape}, index dimension is {index.dimension}"
        )
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    norm = np.linalg.norm(query_vec)
    unit_query = query_vec / norm if norm else query_vec
    scores = index._unit @ unit_query
    if domain is not None:
        scores = np.where(index._domain_arr == domain, scores, -np.inf)
    order = np.lexsort((index._id_rank, -scores))
    out: list[RankedCandidate] = []
    for i in order[: min(k, len(order))]:
        if scores[i] == -np.inf:
            break
        out.append(
            RankedCandidate(
                chunk_id=index.chunk_ids[i],
                score=float(scores[i]),
                rank=len(out) + 1,
                stage=Stage.RETRIEVAL,
            )
        )
    return out


class Bm25Index(BaseEstimator):
    """Okapi BM25 over rendered chunk texts, lowercased module tokens.

    IDF uses the non-negative variant ln((N - df + 0.5) / (df + 0.5) + 1).
    """

    def __init__(self, k1: float = 1.2, b: float = 0.75):
        self.k1 = k1
        self.b = b

    def fit(self, texts_by_id: Mapping[str, str], y=None):
        if not texts_by_id:
            raise ValidationError("bm25 corpus must be non-empty")
        self.chunk_ids_ = tuple(texts_by_id)
        self.term_freqs_ = []
        self.doc_lens_ = []
        df: Counter[str] = Counter()
        for text in texts_by_id.values():
            tokens = [t.lower() for t in token_texts(text)]
            freqs = Counter(tokens)
            self.term_freqs_.append(freqs)
            self.doc_lens_.append(len(tokens))
            df.update(freqs.keys())
        n_docs = len(self.chunk_ids_)
        self.avgdl_ = sum(self.doc_lens_) / n_docs
        self.idf_ = {
            term: math.log((n_docs - d + 0.5) / (d + 0.5) + 1.0) for term, d in df.items()
        }
        return self

    def scores(self, query: str) -> list[float]:
        query_tokens = [t.lower() for t in token_texts(query)]
        out = []
        for freqs, dl in zip(self.term_freqs_, self.doc_lens_):
            denom_norm = self.k1 * (1.0 - self.b + self.b * dl / self.avgdl_)
            s = 0.0
            for term in query_tokens:
                tf = freqs.get(term)
                if not tf:
                    continue
                s += self.idf_[term] * tf * (self.k1 + 1.0) / (tf + denom_norm)
            out.append(s)
        return out

    def top_k(self, query: str, k: int) -> list[RankedCandidate]:
        return _ranked(zip(self.chunk_ids_, self.scores(query)), k, Stage.RETRIEVAL)


def bm25_top_k(
    texts_by_id: Mapping[str, str],
    query: str,
    k: int,
    k1: float = 1.2,
    b: float = 0.75,
) -> list[RankedCandidate]:
    return Bm25Index(k1=k1, b=b).fit(texts_by_id).top_k(query, k)


def save_candidates(
    candidates_by_qid: Mapping[str, Sequence[RankedCandidate]], path: str | Path
) -> None:
    """Persist per-question ranked lists for stage-to-stage piping."""
    with open(path, "w", encoding="utf-8") as handle:
        for qid, candidates in candidates_by_qid.items():
            record = {
                "qid": qid,
                "candidates": [
                    {
                        "chunk_id": c.chunk_id,
                        "score": c.score,
                        "rank": c.rank,
                        "stage": c.stage.value,
                    }
                    for c in candidates
                ],
            }
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")


def load_candidates(path: str | Path) -> dict[str, list[RankedCandidate]]:
    path = Path(path)
    out: dict[str, list[RankedCandidate]] = {}
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                out[record["qid"]] = [
                    RankedCandidate(
                        chunk_id=c["chunk_id"],
                        score=float(c["score"]),
                        rank=int(c["rank"]),
                        stage=Stage(c["stage"]),
                    )
                    for c in record["candidates"]
                ]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"{path}:{line_no}: bad candidate record: {exc}") from exc
    return out


def rrf_fuse(
    lists: Sequence[Sequence[RankedCandidate]],
    rrf_k: float = 60.0,
    k: int = 20,
) -> list[RankedCandidate]:
    """Reciprocal rank fusion: sum 1 / (rrf_k + rank) over the input lists.

    A chunk absent from a list contributes nothing for it. The fused list is
    re-ranked with the canonical tie-break, stage ``fused``.
    """
    if rrf_k <= 0:
        raise ConfigError(f"rrf_k must be > 0, got {rrf_k}")
    if not lists:
        raise ValidationError("rrf_fuse needs at least one ranked list")
    fused: dict[str, float] = {}
    for ranked_list in lists:
        for candidate in ranked_list:
            fused[candidate.chunk_id] = fused.get(candidate.chunk_id, 0.0) + 1.0 / (
                rrf_k + candidate.rank
            )
    return _ranked(fused.items(), k, Stage.FUSED)
