"""Synthetic corpus builders shared by pipeline and acceptance tests.

The planted corpus gives every question one gold page carrying the question
text and the gold option verbatim, surrounded by unique-token filler so the
lexical mocks have an unambiguous target. Question content words carry a
per-question suffix, which kills lexical crosstalk between questions.

With distractors enabled, the gold document also gets a page that repeats
the question text several times but contains no answer option: repetition
dominates the hashed-bag dense similarity while adding nothing to rerank
query coverage, so dense retrieval prefers the distractor and only the
reranker recovers the gold page.
"""

from __future__ import annotations

import random

from pagerag import Document, MCQuestion, Page
from pagerag.corpus import LETTERS

N_DOCS = 20
N_PAGES = 10
N_QUESTIONS = 50

_GOLD_PAGE_SLOTS = (3, 6, 9)


def _filler(rng: random.Random, tag: str, count: int) -> str:
    words = [f"наповнювач{tag}x{i}r{rng.randrange(10_000)}" for i in range(count)]
    return " ".join(words)


def make_question(qi: int) -> MCQuestion:
    gold_letter = LETTERS[1 + qi % (len(LETTERS) - 1)]  # never A, the fallback letter
    options = {
        letter: (
            f"відповідь{qi}{letter.lower()} пояснення{qi}{letter.lower()} "
            f"уточнення{qi}{letter.lower()}"
        )
        for letter in LETTERS
    }
    question = f"Яке значення{qi} має показник{qi} критерію{qi} у документі{qi}?"
    doc_idx = qi % N_DOCS
    slot = (qi // N_DOCS) % len(_GOLD_PAGE_SLOTS)
    return MCQuestion(
        qid=f"q{qi:03d}",
        question=question,
        options=options,
        gold_answer=gold_letter,
        gold_doc=f"doc{doc_idx:02d}",
        gold_page=_GOLD_PAGE_SLOTS[slot],
    )


def build_planted_corpus(
    seed: int = 7,
    n_questions: int = N_QUESTIONS,
    with_distractors: bool = False,
) -> tuple[list[Document], list[MCQuestion]]:
    rng = random.Random(seed)
    questions = [make_question(qi) for qi in range(n_questions)]

    gold_text: dict[tuple[str, int], str] = {}
    distractor_text: dict[tuple[str, int], str] = {}
    for q in questions:
        gold_text[(q.gold_doc, q.gold_page)] = (
            f"{q.question} Правильна відповідь: {q.options[q.gold_answer]}. "
            + _filler(rng, q.qid, 180)
        )
        if with_distractors:
            distractor_text[(q.gold_doc, q.gold_page + 1)] = " ".join([q.question] * 4)

    documents = []
    for di in range(N_DOCS):
        doc_id = f"doc{di:02d}"
        pages = []
        for page_no in range(1, N_PAGES + 1):
            key = (doc_id, page_no)
            if page_no == 1:
                heading = f"# Документ {di:02d}"
                body = f"Документ номер{di:02d}. " + _filler(rng, f"титул{di}", 40)
            else:
                heading = f"## Розділ {page_no} документа {di:02d}"
                if key in gold_text:
                    body = gold_text[key]
                elif key in distractor_text:
                    body = distractor_text[key]
                else:
                    body = _filler(rng, f"{doc_id}p{page_no}", 60)
            pages.append(Page(page_no=page_no, markdown=f"{heading}\n{body}"))
        documents.append(
            Document(doc_id=doc_id, domain="domain_1" if di % 2 else "domain_2",
                     pages=tuple(pages))
        )
    return documents, questions
