"""Document and question loading, validation, and the deterministic tokenizer.

All token budgets elsewhere in the package are counted with :func:`tokenize`,
a fixed Unicode word/punctuation segmenter, so chunk sizes are reproducible
without shipping any model vocabulary. Swap in a model tokenizer by passing a
different callable where a module accepts one.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import ParseError, ValidationError

LETTERS = ("A", "B", "C", "D", "E", "F")

# Maximal runs of Unicode letters/digits first, then any single
# non-whitespace character. Underscore is excluded from runs on purpose:
# it is punctuation for budget-counting purposes.
_TOKEN_RE = re.compile(r"[^\W_]+|\S", re.UNICODE)


@dataclass(frozen=True)
class Token:
    """One token with its (start, end) character span into the source text."""

    text: str
    char_span: tuple[int, int]


def tokenize(text: str) -> list[Token]:
    """Deterministically segment ``text`` into tokens.

    Maximal runs of Unicode letters/digits form one token each; every other
    non-whitespace character is its own token; whitespace yields nothing.
    Spans are non-overlapping, ascending, and slicing the source with a span
    reproduces the token text exactly.
    """
    return [Token(m.group(0), (m.start(), m.end())) for m in _TOKEN_RE.finditer(text)]


def token_texts(text: str) -> list[str]:
    """Token strings only, skipping span bookkeeping."""
    return _TOKEN_RE.findall(text)


def count_tokens(text: str) -> int:
    return sum(1 for _ in _TOKEN_RE.finditer(text))


@dataclass(frozen=True)
class Page:
    """A single page of pre-extracted Markdown."""

    page_no: int
    markdown: str

    def __post_init__(self):
        if self.page_no < 1:
            raise ValidationError(f"page_no must be >= 1, got {self.page_no}")


@dataclass(frozen=True)
class Document:
    """A paginated source document with an optional domain tag."""

    doc_id: str
    pages: tuple[Page, ...]
    domain: str | None = None

    def __post_init__(self):
        if not self.doc_id:
            raise ValidationError("doc_id must be non-empty")
        if not self.pages:
            raise ValidationError(f"document {self.doc_id!r} has no pages")
        object.__setattr__(self, "pages", tuple(self.pages))
        for position, page in enumerate(self.pages, start=1):
            if page.page_no != position:
                raise ValidationError(
                    f"document {self.doc_id!r}: page gap, expected page "
                    f"{position} but found {page.page_no}"
                )

    @property
    def n_pages(self) -> int:
        return len(self.pages)


@dataclass(frozen=True)
class MCQuestion:
    """A six-option multiple-choice question, optionally with gold labels."""

    qid: str
    question: str
    options: dict[str, str]
    gold_answer: str | None = None
    gold_doc: str | None = None
    gold_page: int | None = None

    def __post_init__(self):
        if not self.qid:
            raise ValidationError("qid must be non-empty")
        if not self.question:
            raise ValidationError(f"question {self.qid!r} has empty text")
        if tuple(sorted(self.options)) != LETTERS:
            raise ValidationError(
                f"question {self.qid!r} must have exactly six options A-F, "
                f"got keys {sorted(self.options)}"
            )
        if self.gold_answer is not None and self.gold_answer not in LETTERS:
            raise ValidationError(
                f"question {self.qid!r}: gold_answer {self.gold_answer!r} not in A-F"
            )
        if self.gold_page is not None and self.gold_doc is None:
            raise ValidationError(
                f"question {self.qid!r}: gold_page given without gold_doc"
            )


def validate_gold_references(questions: Iterable[MCQuestion], documents: Iterable[Document]) -> None:
    """Check that gold (doc, page) labels point into the corpus."""
    by_id = {d.doc_id: d for d in documents}
    for q in questions:
        if q.gold_doc is None:
            continue
        doc = by_id.get(q.gold_doc)
        if doc is None:
            raise ValidationError(
                f"question {q.qid!r}: gold_doc {q.gold_doc!r} not in corpus"
            )
        if q.gold_page is not None and not 1 <= q.gold_page <= doc.n_pages:
            raise ValidationError(
                f"question {q.qid!r}: gold_page {q.gold_page} outside "
                f"1..{doc.n_pages} of document {q.gold_doc!r}"
            )


def _read_records(path: Path) -> Iterable[tuple[int, dict]]:
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{line_no}: malformed record: {exc}") from exc
            if not isinstance(record, dict):
                raise ParseError(f"{path}:{line_no}: record is not an object")
            yield line_no, record


def load_corpus(path: str | Path) -> list[Document]:
    """Load a line-delimited document collection.

    One JSON object per line: ``{"doc_id", "domain", "pages": [{"page_no",
    "markdown"}, ...]}``. Page numbers must be 1..n contiguous; doc_ids must
    be unique across the file.
    """
    path = Path(path)
    documents: list[Document] = []
    seen: set[str] = set()
    for line_no, record in _read_records(path):
        try:
            pages = tuple(
                Page(page_no=int(p["page_no"]), markdown=str(p["markdown"]))
                for p in record["pages"]
            )
            doc = Document(
                doc_id=str(record["doc_id"]),
                domain=record.get("domain"),
                pages=pages,
            )
        except (KeyError, TypeError) as exc:
            raise ParseError(f"{path}:{line_no}: missing field: {exc}") from exc
        except ValidationError as exc:
            raise ValidationError(f"{path}:{line_no}: {exc}") from exc
        if doc.doc_id in seen:
            raise ValidationError(f"{path}:{line_no}: duplicate doc_id {doc.doc_id!r}")
        seen.add(doc.doc_id)
        documents.append(doc)
    return documents


def save_corpus(documents: Iterable[Document], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for doc in documents:
            record = {
                "doc_id": doc.doc_id,
                "domain": doc.domain,
                "pages": [{"page_no": p.page_no, "markdown": p.markdown} for p in doc.pages],
            }
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")


def load_questions(path: str | Path, documents: Iterable[Document] | None = None) -> list[MCQuestion]:
    """Load a line-delimited question set; optionally cross-check gold labels."""
    path = Path(path)
    questions: list[MCQuestion] = []
    seen: set[str] = set()
    for line_no, record in _read_records(path):
        try:
            q = MCQuestion(
                qid=str(record["qid"]),
                question=str(record["question"]),
                options={k: str(v) for k, v in record["options"].items()},
                gold_answer=record.get("gold_answer"),
                gold_doc=record.get("gold_doc"),
                gold_page=record.get("gold_page"),
            )
        except (KeyError, TypeError, AttributeError) as exc:
            raise ParseError(f"{path}:{line_no}: missing field: {exc}") from exc
        except ValidationError as exc:
            raise ValidationError(f"{path}:{line_no}: {exc}") from exc
        if q.qid in seen:
            raise ValidationError(f"{path}:{line_no}: duplicate qid {q.qid!r}")
        seen.add(q.qid)
        questions.append(q)
    if documents is not None:
        validate_gold_references(questions, documents)
    return questions


def save_questions(questions: Iterable[MCQuestion], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for q in questions:
            record = {
                "qid": q.qid,
                "question": q.question,
                "options": dict(sorted(q.options.items())),
                "gold_answer": q.gold_answer,
                "gold_doc": q.gold_doc,
                "gold_page": q.gold_page,
            }
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")
