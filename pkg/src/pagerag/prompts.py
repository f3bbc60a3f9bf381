"""Prompt templates, loaded from versioned text assets and rendered verbatim.

The templates live under ``pagerag/templates/`` so their whitespace is
byte-stable and reviewable as plain text. Rendering only substitutes the
placeholder slots; option texts are inserted as-is, with no escaping.
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources
from typing import Mapping

from .corpus import LETTERS

TEMPLATE_VERSION = 1

_DOCUMENT_SLOT = "\n\n<Document>: {document}"


@lru_cache(maxsize=None)
def _load(name: str) -> str:
    text = resources.files("pagerag.templates").joinpath(name).read_text("utf-8")
    # Template files end with one editorial newline that is not part of the
    # rendered prompt.
    return text[:-1] if text.endswith("\n") else text


def format_choices(options: Mapping[str, str]) -> str:
    """Render the six options as ``A) ...`` through ``F) ...``, one per line."""
    return "\n".join(f"{letter}) {options[letter]}" for letter in LETTERS)


def retrieval_query(question: str, options: Mapping[str, str]) -> str:
    """Full-instance retrieval query: instruction, question, and all options."""
    return _load("retrieval_query.txt").format(
        question=question, choices=format_choices(options)
    )


def rerank_system() -> str:
    return _load("rerank_system.txt")


def rerank_user(question: str, options: Mapping[str, str], document: str) -> str:
    """Complete relevance-judging prompt for one (query, document) pair."""
    return _load("rerank_user.txt").format(
        question=question, choices=format_choices(options), document=document
    )


def rerank_query(question: str, options: Mapping[str, str]) -> str:
    """The option-aware rerank query: the user template minus the document slot."""
    template = _load("rerank_user.txt")
    if not template.endswith(_DOCUMENT_SLOT):
        raise RuntimeError("rerank_user template lost its document slot")
    return template[: -len(_DOCUMENT_SLOT)].format(
        question=question, choices=format_choices(options)
    )


def answer_system() -> str:
    return _load("answer_system.txt")


def answer_user(question: str, options: Mapping[str, str], context_blocks: str) -> str:
    """Answer-selection prompt; question and options repeat around the excerpts."""
    return _load("answer_user.txt").format(
        question=question,
        choices=format_choices(options),
        context_blocks=context_blocks,
    )
