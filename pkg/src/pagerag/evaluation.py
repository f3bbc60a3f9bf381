"""Composite answer+grounding metric, retrieval recall, and run reports.

The total score is 1/2 answer accuracy + 1/4 document accuracy + 1/4 page
proximity, where page proximity is 1 - |pred - gold| / n_pages and is
credited only when the predicted document is correct.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .chunking import Chunk
from .corpus import Document, MCQuestion
from .errors import DomainError, MissingPrediction, UnknownGoldDoc, ValidationError
from .answer import Prediction
from .retrieval import RankedCandidate

ANSWER_WEIGHT = 0.5
DOC_WEIGHT = 0.25
PAGE_WEIGHT = 0.25

REPORT_KS = (1, 2, 5, 20)
MISSING_CELL = "—"


@dataclass(frozen=True)
class QuestionScore:
    qid: str
    answer_correct: float
    doc_correct: float
    page: float


@dataclass(frozen=True)
class ScoreBreakdown:
    answer_acc: float
    doc_acc: float
    page_score: float
    total: float
    per_question: tuple[QuestionScore, ...]

    def as_dict(self) -> dict:
        return {
            "answer_acc": self.answer_acc,
            "doc_acc": self.doc_acc,
            "page_score": self.page_score,
            "total": self.total,
        }


def page_component(pred_page: int, gold_page: int, n_pages: int, doc_correct: bool) -> float:
    """Page proximity in [0, 1], gated on document correctness.

    Clamped at zero so a wildly wrong page (|diff| > n_pages) cannot push
    the component negative.
    """
    if n_pages < 1:
        raise DomainError(f"n_pages must be >= 1, got {n_pages}")
    if not doc_correct:
        return 0.0
    return max(0.0, 1.0 - abs(pred_page - gold_page) / n_pages)


def score(
    predictions: Sequence[Prediction],
    gold: Sequence[MCQuestion],
    corpus: Sequence[Document],
) -> ScoreBreakdown:
    """Score predictions against gold-labelled questions."""
    if not gold:
        raise ValidationError("gold question list is empty")
    docs = {d.doc_id: d for d in corpus}
    by_qid: dict[str, Prediction] = {}
    for p in predictions:
        if p.qid in by_qid:
            raise ValidationError(f"duplicate prediction for qid {p.qid!r}")
        by_qid[p.qid] = p

    rows: list[QuestionScore] = []
    for q in gold:
        if q.gold_answer is None or q.gold_doc is None or q.gold_page is None:
            raise ValidationError(f"question {q.qid!r} is missing gold labels")
        pred = by_qid.get(q.qid)
        if pred is None:
            raise MissingPrediction(f"no prediction for qid {q.qid!r}")
        gold_doc = docs.get(q.gold_doc)
        if gold_doc is None:
            raise UnknownGoldDoc(f"gold doc {q.gold_doc!r} not in corpus")
        a = 1.0 if pred.answer == q.gold_answer else 0.0
        d = 1.0 if pred.doc_id == q.gold_doc else 0.0
        p = page_component(pred.page_no, q.gold_page, gold_doc.n_pages, d == 1.0)
        rows.append(QuestionScore(qid=q.qid, answer_correct=a, doc_correct=d, page=p))

    n = len(rows)
    answer_acc = sum(r.answer_correct for r in rows) / n
    doc_acc = sum(r.doc_correct for r in rows) / n
    page_score = sum(r.page for r in rows) / n
    total = ANSWER_WEIGHT * answer_acc + DOC_WEIGHT * doc_acc + PAGE_WEIGHT * page_score
    return ScoreBreakdown(
        answer_acc=answer_acc,
        doc_acc=doc_acc,
        page_score=page_score,
        total=total,
        per_question=tuple(rows),
    )


def recall_at_k(
    ranked: Sequence[RankedCandidate],
    gold_doc: str,
    gold_page: int,
    chunks: Mapping[str, Chunk],
    k: int,
) -> bool:
    """True iff some top-k candidate resolves to the gold (doc, page)."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    for candidate in ranked[:k]:
        chunk = chunks.get(candidate.chunk_id)
        if chunk is not None and (chunk.doc_id, chunk.page_no) == (gold_doc, gold_page):
            return True
    return False


def recall_curve(
    ranked_by_qid: Mapping[str, Sequence[RankedCandidate]],
    gold: Sequence[MCQuestion],
    chunks: Mapping[str, Chunk],
    ks: Sequence[int] = REPORT_KS,
) -> dict[int, float]:
    """Fraction of questions whose gold page appears in the top k, per k."""
    labelled = [q for q in gold if q.gold_doc is not None and q.gold_page is not None]
    if not labelled:
        raise ValidationError("no questions carry gold (doc, page) labels")
    curve = {}
    for k in ks:
        hits = sum(
            recall_at_k(ranked_by_qid.get(q.qid, ()), q.gold_doc, q.gold_page, chunks, k)
            for q in labelled
        )
        curve[k] = hits / len(labelled)
    return curve


@dataclass(frozen=True)
class RunSummary:
    """One named configuration's scores for side-by-side reporting."""

    name: str
    breakdown: ScoreBreakdown
    recall: Mapping[int, float] | None = None

    def to_json(self) -> str:
        payload = {"name": self.name, "breakdown": self.breakdown.as_dict()}
        if self.recall is not None:
            payload["recall"] = {str(k): v for k, v in self.recall.items()}
        return json.dumps(payload, ensure_ascii=False, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RunSummary":
        payload = json.loads(text)
        b = payload["breakdown"]
        breakdown = ScoreBreakdown(
            answer_acc=b["answer_acc"],
            doc_acc=b["doc_acc"],
            page_score=b["page_score"],
            total=b["total"],
            per_question=(),
        )
        recall = payload.get("recall")
        if recall is not None:
            recall = {int(k): v for k, v in recall.items()}
        return cls(name=payload["name"], breakdown=breakdown, recall=recall)


def _report_rows(runs: Sequence[RunSummary], ks: Sequence[int]) -> list[list[str]]:
    header = ["run", "total", "answer", "doc", "page"] + [f"recall@{k}" for k in ks]
    rows = [header]
    for run in runs:
        b = run.breakdown
        cells = [run.name, f"{b.total:.4f}", f"{b.answer_acc:.4f}",
                 f"{b.doc_acc:.4f}", f"{b.page_score:.4f}"]
        for k in ks:
            if run.recall is not None and k in run.recall:
                cells.append(f"{run.recall[k]:.4f}")
            else:
                cells.append(MISSING_CELL)
        rows.append(cells)
    return rows


def format_report(runs: Sequence[RunSummary], ks: Sequence[int] = REPORT_KS) -> str:
    """Aligned text table over the runs, in input order."""
    if not runs:
        raise ValidationError("report needs at least one run")
    rows = _report_rows(runs, ks)
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = []
    for row in rows:
        lines.append("  ".join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip())
    return "\n".join(lines)


def report_csv(runs: Sequence[RunSummary], ks: Sequence[int] = REPORT_KS) -> str:
    if not runs:
        raise ValidationError("report needs at least one run")
    buffer = io.StringIO()
    writer = csv.writer(buffer)
    for row in _report_rows(runs, ks):
        writer.writerow(row)
    return buffer.getvalue()
