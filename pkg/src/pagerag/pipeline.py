"""End-to-end orchestration: chunk, embed/index, retrieve, rerank, answer.

Questions are processed independently under a bounded worker pool; shared
state (chunk store, indexes) is immutable after fit. Per-question backend
failures degrade that question's row instead of aborting the batch, and the
run manifest records hashes, stage timings, backend call counts, and the
number of degraded questions.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .answer import FALLBACK_LETTER, Prediction, answer_question
from .backends import (
    BackendConfig,
    Embedder,
    LetterChooser,
    RerankScorer,
    make_embedder,
    make_letter_chooser,
    make_reranker,
)
from .chunking import Chunk, ChunkConfig, build_chunk_store, build_chunks, render_chunk
from .corpus import Document, MCQuestion
from .errors import (
    BackendUnavailable,
    CacheError,
    ConfigError,
    ProtocolError,
    ShapeError,
    ValidationError,
)
from .rerank import RerankConfig, rerank_candidates, select_evidence
from .retrieval import (
    Bm25Index,
    RankedCandidate,
    RetrievalConfig,
    VectorIndex,
    build_lexical_query,
    build_query,
    dense_top_k,
    rrf_fuse,
)

logger = logging.getLogger(__name__)


def _mock_backend(name: str) -> BackendConfig:
    return BackendConfig(endpoint_url=f"mock://{name}", model_name="mock")


@dataclass(frozen=True)
class PipelineConfig:
    chunk: ChunkConfig = field(default_factory=ChunkConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    rerank: RerankConfig = field(default_factory=RerankConfig)
    embed_backend: BackendConfig = field(default_factory=lambda: _mock_backend("embedder"))
    rerank_backend: BackendConfig = field(default_factory=lambda: _mock_backend("reranker"))
    generate_backend: BackendConfig = field(default_factory=lambda: _mock_backend("generator"))
    concurrency_limit: int = 4
    cache_dir: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.concurrency_limit < 1:
            raise ConfigError(f"concurrency_limit must be >= 1, got {self.concurrency_limit}")


def config_hash(config) -> str:
    """Order-independent digest of any (nested) config dataclass."""
    canonical = json.dumps(asdict(config), sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def corpus_hash(documents: Sequence[Document]) -> str:
    digest = hashlib.sha256()
    for doc in documents:
        record = {
            "doc_id": doc.doc_id,
            "domain": doc.domain,
            "pages": [{"page_no": p.page_no, "markdown": p.markdown} for p in doc.pages],
        }
        digest.update(json.dumps(record, sort_keys=True, ensure_ascii=False).encode("utf-8"))
        digest.update(b"\n")
    return digest.hexdigest()


@dataclass
class RunManifest:
    """What a run did: hashes, shapes, timings, degradations, call counts."""

    config_hash: str
    corpus_hash: str
    chunk_count: int
    question_count: int
    top_k: int
    keep_m: int
    rerank_enabled: bool
    degraded_count: int
    backend_calls: dict[str, int]
    stage_seconds: dict[str, float]
    cache_hit: bool

    def fingerprint(self) -> dict:
        """Everything deterministic (wall-clock timings excluded)."""
        payload = asdict(self)
        payload.pop("stage_seconds")
        return payload

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)


class _Counters:
    def __init__(self):
        self._lock = threading.Lock()
        self.calls: dict[str, int] = {"embed": 0, "rerank": 0, "generate": 0}
        self.seconds: dict[str, float] = {}
        self.degraded = 0

    def count(self, backend: str) -> None:
        with self._lock:
            self.calls[backend] += 1

    def degrade(self) -> None:
        with self._lock:
            self.degraded += 1

    @contextmanager
    def stage(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            elapsed = time.perf_counter() - start
            with self._lock:
                self.seconds[name] = self.seconds.get(name, 0.0) + elapsed


class RagPipeline(BaseEstimator):
    """fit(documents) builds the chunk store and index; predict(questions)
    answers them.

    Backends default to the deterministic mocks; pass explicit client
    instances (or a config whose endpoints are http URLs) for real runs.
    """

    def __init__(
        self,
        config: PipelineConfig | None = None,
        embedder: Embedder | None = None,
        scorer: RerankScorer | None = None,
        chooser: LetterChooser | None = None,
    ):
        self.config = config
        self.embedder = embedder
        self.scorer = scorer
        self.chooser = chooser

    # -- fitting -----------------------------------------------------------

    def fit(self, X: Sequence[Document], y=None):
        cfg = self.config or PipelineConfig()
        documents = list(X)
        if not documents:
            raise ValidationError("corpus must contain at least one document")
        seen = set()
        for doc in documents:
            if doc.doc_id in seen:
                raise ValidationError(f"duplicate doc_id {doc.doc_id!r}")
            seen.add(doc.doc_id)

        self._cfg = cfg
        self._embedder = self.embedder or make_embedder(cfg.embed_backend)
        self._scorer = self.scorer or make_reranker(cfg.rerank_backend)
        self._chooser = self.chooser or make_letter_chooser(cfg.generate_backend)
        self._counters = _Counters()
        self.corpus_hash_ = corpus_hash(documents)
        self._fallback_doc = documents[0].doc_id
        self._domain_of = {d.doc_id: d.domain for d in documents}

        with self._counters.stage("chunk"):
            chunks: list[Chunk] = []
            for doc in documents:
                chunks.extend(build_chunks(doc, cfg.chunk))
            if not chunks:
                raise ValidationError("corpus produced no chunks")
            self.chunks_ = chunks
            self.store_ = build_chunk_store(chunks)

        with self._counters.stage("index"):
            self.cache_hit_ = False
            self.index_ = self._load_or_build_index(cfg, chunks)
            if cfg.retrieval.fusion == "rrf":
                texts = {c.chunk_id: render_chunk(c) for c in chunks}
                self.bm25_ = Bm25Index(k1=cfg.retrieval.bm25_k1, b=cfg.retrieval.bm25_b).fit(texts)
            else:
                self.bm25_ = None
        return self

    def _cache_meta(self, cfg: PipelineConfig) -> dict[str, str]:
        return {
            "corpus_hash": self.corpus_hash_,
            "chunk_config_hash": config_hash(cfg.chunk),
            "model_name": cfg.embed_backend.model_name,
        }

    def _cache_path(self, cfg: PipelineConfig) -> Path:
        meta = self._cache_meta(cfg)
        key = hashlib.sha256(json.dumps(meta, sort_keys=True).encode("utf-8")).hexdigest()
        return Path(cfg.cache_dir) / f"embeddings-{key[:24]}.jsonl"

    def _load_or_build_index(self, cfg: PipelineConfig, chunks: Sequence[Chunk]) -> VectorIndex:
        cache_path = None
        if cfg.cache_dir is not None:
            cache_path = self._cache_path(cfg)
            if cache_path.exists():
                try:
                    index, header = VectorIndex.load(cache_path)
                except CacheError as exc:
                    logger.warning("rebuilding embeddings, cache unusable: %s", exc)
                else:
                    meta = self._cache_meta(cfg)
                    if all(header.get(k) == v for k, v in meta.items()):
                        self.cache_hit_ = True
                        return index
                    logger.warning("rebuilding embeddings, cache key is stale")

        texts = [render_chunk(c) for c in chunks]
        self._counters.count("embed")
        vectors = self._embedder.embed(texts)
        entries = [
            (c.chunk_id, vec, c.doc_id, c.page_no, self._domain_of[c.doc_id])
            for c, vec in zip(chunks, vectors)
        ]
        index = VectorIndex.from_entries(entries)
        if cache_path is not None:
            cache_path.parent.mkdir(parents=True, exist_ok=True)
            index.save(cache_path, extra_header=self._cache_meta(cfg))
        return index

    # -- prediction --------------------------------------------------------

    def _check_fitted(self):
        if not hasattr(self, "index_"):
            raise NotFittedError("call fit(documents) before predict")

    @property
    def backend_calls_(self) -> dict[str, int]:
        """Backend invocations so far (fit included); useful for cache checks."""
        self._check_fitted()
        return dict(self._counters.calls)

    def retrieve(self, q: MCQuestion, domain: str | None = None) -> list[RankedCandidate]:
        """First-stage candidates for one question (dense, optionally fused)."""
        self._check_fitted()
        cfg = self._cfg
        with self._counters.stage("retrieve"):
            self._counters.count("embed")
            [query_vec] = self._embedder.embed([build_query(q)])
            mask = domain if cfg.retrieval.domain_mask else None
            dense = dense_top_k(self.index_, query_vec, cfg.retrieval.top_k, domain=mask)
            if self.bm25_ is None:
                return dense
            lexical = self.bm25_.top_k(build_lexical_query(q), cfg.retrieval.top_k)
            return rrf_fuse([dense, lexical], cfg.retrieval.rrf_k, cfg.retrieval.top_k)

    def rerank(self, q: MCQuestion, candidates: Sequence[RankedCandidate]) -> list[RankedCandidate]:
        """Second-stage ordering; pass-through when the stage is disabled."""
        self._check_fitted()
        if not self._cfg.rerank.enabled:
            return list(candidates)
        with self._counters.stage("rerank"):
            self._counters.count("rerank")
            return rerank_candidates(q, candidates, self.store_, self._scorer)

    def _fallback(self, q: MCQuestion, candidates: Sequence[RankedCandidate]) -> Prediction:
        if candidates:
            chunk = self.store_[candidates[0].chunk_id]
            doc_id, page_no = chunk.doc_id, chunk.page_no
        else:
            doc_id, page_no = self._fallback_doc, 1
        return Prediction(qid=q.qid, answer=FALLBACK_LETTER, doc_id=doc_id, page_no=page_no)

    def _answer_one(self, q: MCQuestion, domain: str | None) -> Prediction:
        candidates: list[RankedCandidate] = []
        try:
            candidates = self.retrieve(q, domain)
            if not candidates:
                logger.warning("question %s: no candidates (masked out?), degrading", q.qid)
                self._counters.degrade()
                return self._fallback(q, candidates)
            reranked = self.rerank(q, candidates)
            evidence = select_evidence(reranked, self._cfg.rerank)
            with self._counters.stage("answer"):
                self._counters.count("generate")
                prediction, degraded = answer_question(q, evidence, self.store_, self._chooser)
            if degraded:
                self._counters.degrade()
            return prediction
        except (BackendUnavailable, ShapeError, ProtocolError) as exc:
            logger.warning("question %s: backend failure (%s), degrading", q.qid, exc)
            self._counters.degrade()
            return self._fallback(q, candidates)

    def predict(
        self,
        X: Sequence[MCQuestion],
        domains: Mapping[str, str] | None = None,
    ) -> list[Prediction]:
        """Answer questions in input order; fills ``manifest_``.

        ``domains`` optionally maps qid to a domain tag for masked retrieval
        (only consulted when the retrieval config enables the mask).
        """
        self._check_fitted()
        questions = list(X)
        domains = domains or {}
        limit = self._cfg.concurrency_limit
        if questions:
            with ThreadPoolExecutor(max_workers=limit) as pool:
                predictions = list(
                    pool.map(lambda q: self._answer_one(q, domains.get(q.qid)), questions)
                )
        else:
            predictions = []
        self.manifest_ = RunManifest(
            config_hash=config_hash(self._cfg),
            corpus_hash=self.corpus_hash_,
            chunk_count=len(self.chunks_),
            question_count=len(questions),
            top_k=self._cfg.retrieval.top_k,
            keep_m=self._cfg.rerank.keep_m,
            rerank_enabled=self._cfg.rerank.enabled,
            degraded_count=self._counters.degraded,
            backend_calls=dict(self._counters.calls),
            stage_seconds=dict(self._counters.seconds),
            cache_hit=self.cache_hit_,
        )
        return predictions


def run(
    corpus: Sequence[Document],
    questions: Sequence[MCQuestion],
    config: PipelineConfig | None = None,
    domains: Mapping[str, str] | None = None,
) -> tuple[list[Prediction], RunManifest]:
    """One-shot fit + predict returning (predictions, manifest)."""
    pipeline = RagPipeline(config=config)
    pipeline.fit(corpus)
    predictions = pipeline.predict(questions, domains=domains)
    return predictions, pipeline.manifest_
