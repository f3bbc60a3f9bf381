"""Option-aware reranking and evidence selection.

The rerank query concatenates the question with all six answer options, so
relevance reflects which alternatives must be distinguished rather than
broad topical similarity. All retrieval candidates are rescored (no early
exit) and the top few survivors are handed to the answer stage.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from . import prompts
from .backends import RerankScorer
from .chunking import Chunk, render_chunk
from .corpus import MCQuestion
from .errors import ConfigError, MissingChunk
from .retrieval import RankedCandidate, Stage


@dataclass(frozen=True)
class RerankConfig:
    """Evidence-selection settings.

    Fixed mode keeps the top ``keep_m`` passages. Adaptive mode keeps 1, 2,
    or 3 passages depending on whether the top rerank score clears ``t_hi``,
    falls in [t_lo, t_hi), or sits below ``t_lo``. ``enabled=False`` turns
    the stage into a pass-through (retrieval order reaches the answerer).
    """

    keep_m: int = 2
    adaptive: bool = False
    t_hi: float = 0.9
    t_lo: float = 0.5
    enabled: bool = True

    def __post_init__(self):
        if self.keep_m < 1:
            raise ConfigError(f"keep_m must be >= 1, got {self.keep_m}")
        if not 0.0 <= self.t_lo <= self.t_hi <= 1.0:
            raise ConfigError(
                f"need 0 <= t_lo <= t_hi <= 1, got t_lo={self.t_lo}, t_hi={self.t_hi}"
            )


def build_rerank_query(q: MCQuestion) -> str:
    """Option-aware rerank query; the document slot is filled per candidate."""
    return prompts.rerank_query(q.question, q.options)


def rerank_candidates(
    q: MCQuestion,
    candidates: Sequence[RankedCandidate],
    chunks: Mapping[str, Chunk],
    scorer: RerankScorer,
) -> list[RankedCandidate]:
    """Rescore every candidate's rendered chunk and re-sort.

    Ties fall back to the prior retrieval rank, then chunk_id, so results
    are a deterministic permutation of the input candidates.
    """
    if not candidates:
        raise ValueError("candidates must be non-empty")
    documents = []
    for candidate in candidates:
        chunk = chunks.get(candidate.chunk_id)
        if chunk is None:
            raise MissingChunk(f"candidate references unknown chunk {candidate.chunk_id!r}")
        documents.append(render_chunk(chunk))
    scores = scorer.rerank_score(build_rerank_query(q), documents)
    order = sorted(
        zip(candidates, scores),
        key=lambda pair: (-pair[1], pair[0].rank, pair[0].chunk_id),
    )
    return [
        RankedCandidate(
            chunk_id=candidate.chunk_id,
            score=float(score),
            rank=i + 1,
            stage=Stage.RERANKED,
        )
        for i, (candidate, score) in enumerate(order)
    ]


def select_evidence(
    reranked: Sequence[RankedCandidate], cfg: RerankConfig
) -> list[RankedCandidate]:
    """Prefix of the reranked list: fixed top-m or confidence-adaptive 1/2/3."""
    if not reranked:
        return []
    if not cfg.adaptive:
        return list(reranked[: cfg.keep_m])
    top_score = reranked[0].score
    if top_score >= cfg.t_hi:
        keep = 1
    elif top_score >= cfg.t_lo:
        keep = 2
    else:
        keep = 3
    return list(reranked[:keep])
