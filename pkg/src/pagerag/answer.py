"""Final answer selection and document/page localization.

The generator sees the question, the six options, and the selected evidence
passages with their ranks exposed, and must emit a single letter. The
predicted document and page always come from the rank-1 evidence chunk,
never from the generated text.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from . import prompts
from .backends import LetterChooser
from .chunking import Chunk, render_chunk
from .corpus import LETTERS, MCQuestion
from .errors import MissingChunk, ParseError, ProtocolError, ValidationError
from .retrieval import RankedCandidate

logger = logging.getLogger(__name__)

FALLBACK_LETTER = "A"


@dataclass(frozen=True)
class Prediction:
    """Per-question output row: answer letter plus (doc, page) grounding."""

    qid: str
    answer: str
    doc_id: str
    page_no: int

    def __post_init__(self):
        if self.answer not in LETTERS:
            raise ValidationError(f"prediction {self.qid!r}: answer {self.answer!r} not in A-F")
        if self.page_no < 1:
            raise ValidationError(f"prediction {self.qid!r}: page_no must be >= 1")


def _resolve(chunks: Mapping[str, Chunk], chunk_id: str) -> Chunk:
    chunk = chunks.get(chunk_id)
    if chunk is None:
        raise MissingChunk(f"evidence references unknown chunk {chunk_id!r}")
    return chunk


def build_answer_prompts(
    q: MCQuestion,
    evidence: Sequence[RankedCandidate],
    chunks: Mapping[str, Chunk],
) -> tuple[str, str]:
    """Render the (system, user) answer prompts for one question.

    Evidence appears as ``[rank r | doc | page] <chunk text>`` blocks in
    ascending rank; lower rank means a stronger retrieval signal.
    """
    if not evidence:
        raise ValueError("evidence must be non-empty")
    blocks = []
    for candidate in sorted(evidence, key=lambda c: c.rank):
        chunk = _resolve(chunks, candidate.chunk_id)
        blocks.append(
            f"[rank {candidate.rank} | {chunk.doc_id} | {chunk.page_no}] {render_chunk(chunk)}"
        )
    user = prompts.answer_user(q.question, q.options, "\n\n".join(blocks))
    return prompts.answer_system(), user


def answer_question(
    q: MCQuestion,
    evidence: Sequence[RankedCandidate],
    chunks: Mapping[str, Chunk],
    chooser: LetterChooser,
) -> tuple[Prediction, bool]:
    """Choose a letter and localize; returns (prediction, degraded).

    A ProtocolError from the generator degrades to the fallback letter
    instead of crashing the batch; the flag lets callers count degraded
    rows. Backend connectivity errors still propagate.
    """
    system_prompt, user_prompt = build_answer_prompts(q, evidence, chunks)
    degraded = False
    try:
        letter = chooser.choose_letter(system_prompt, user_prompt).argmax()
    except ProtocolError as exc:
        logger.warning("question %s: generator degraded (%s), answering %s",
                       q.qid, exc, FALLBACK_LETTER)
        letter = FALLBACK_LETTER
        degraded = True
    top = _resolve(chunks, min(evidence, key=lambda c: c.rank).chunk_id)
    return Prediction(qid=q.qid, answer=letter, doc_id=top.doc_id, page_no=top.page_no), degraded


def save_predictions(predictions: Iterable[Prediction], path: str | Path) -> None:
    """Write the submission CSV: qid,answer,doc_id,page_no."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["qid", "answer", "doc_id", "page_no"])
        for p in predictions:
            writer.writerow([p.qid, p.answer, p.doc_id, p.page_no])


def load_predictions(path: str | Path) -> list[Prediction]:
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        required = {"qid", "answer", "doc_id", "page_no"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ParseError(f"{path}: expected header qid,answer,doc_id,page_no")
        out = []
        for row_no, row in enumerate(reader, start=2):
            try:
                out.append(
                    Prediction(
                        qid=row["qid"],
                        answer=row["answer"],
                        doc_id=row["doc_id"],
                        page_no=int(row["page_no"]),
                    )
                )
            except (TypeError, ValueError) as exc:
                raise ParseError(f"{path}:{row_no}: bad prediction row: {exc}") from exc
        return out
