"""Grounded multiple-choice QA over paginated document collections.

Pipeline stages: contextual chunking, option-aware dense retrieval and
reranking, constrained A-F answer selection with document/page
localization, plus the composite answer+grounding metric and hard-negative
mining for training exports.
"""

from .answer import Prediction, answer_question, build_answer_prompts
from .backends import (
    BackendConfig,
    LetterDistribution,
    MockEmbedder,
    MockLetterChooser,
    MockReranker,
    RetryPolicy,
)
from .chunking import Chunk, ChunkConfig, ContextualChunker, build_chunks, render_chunk
from .corpus import (
    Document,
    MCQuestion,
    Page,
    Token,
    load_corpus,
    load_questions,
    tokenize,
)
from .evaluation import ScoreBreakdown, page_component, recall_at_k, score
from .mining import NegativeCategory, TrainingPair, mine_negatives
from .pipeline import PipelineConfig, RagPipeline, RunManifest, run
from .rerank import RerankConfig, rerank_candidates, select_evidence
from .retrieval import (
    Bm25Index,
    RankedCandidate,
    RetrievalConfig,
    Stage,
    VectorIndex,
    bm25_top_k,
    build_query,
    dense_top_k,
    rrf_fuse,
)

__version__ = "0.1.0"

__all__ = [
    "BackendConfig",
    "Bm25Index",
    "Chunk",
    "ChunkConfig",
    "ContextualChunker",
    "Document",
    "LetterDistribution",
    "MCQuestion",
    "MockEmbedder",
    "MockLetterChooser",
    "MockReranker",
    "NegativeCategory",
    "Page",
    "PipelineConfig",
    "Prediction",
    "RagPipeline",
    "RankedCandidate",
    "RerankConfig",
    "RetrievalConfig",
    "RetryPolicy",
    "RunManifest",
    "ScoreBreakdown",
    "Stage",
    "Token",
    "TrainingPair",
    "VectorIndex",
    "answer_question",
    "bm25_top_k",
    "build_answer_prompts",
    "build_chunks",
    "build_query",
    "dense_top_k",
    "load_corpus",
    "load_questions",
    "mine_negatives",
    "page_component",
    "recall_at_k",
    "render_chunk",
    "rerank_candidates",
    "rrf_fuse",
    "run",
    "score",
    "select_evidence",
    "tokenize",
]
