"""Inference backends: embed, rerank-score, and choose-letter contracts.

Each contract has an HTTP client speaking an OpenAI-compatible wire format
and a pure, deterministic mock for offline runs and tests. Mock outputs are
bit-identical across runs and platforms (hashes come from blake2b, never
from Python's salted ``hash``).
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
import random
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import numpy as np
import requests

from .corpus import LETTERS, token_texts
from .errors import BackendUnavailable, ProtocolError, ShapeError

logger = logging.getLogger(__name__)

MOCK_SCHEME = "mock"
DEFAULT_MOCK_DIM = 256

_RETRYABLE_STATUSES = {429, 500, 502, 503, 504}


@dataclass(frozen=True)
class RetryPolicy:
    attempts: int = 3
    backoff: float = 0.5

    def __post_init__(self):
        if self.attempts < 1:
            raise ValueError(f"retry attempts must be >= 1, got {self.attempts}")


@dataclass(frozen=True)
class BackendConfig:
    """Connection settings for one remote backend."""

    endpoint_url: str
    model_name: str
    timeout: float = 60.0
    max_in_flight: int = 4
    max_batch: int = 32
    retry: RetryPolicy = field(default_factory=RetryPolicy)

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise ValueError(f"max_in_flight must be >= 1, got {self.max_in_flight}")
        if self.max_batch < 1:
            raise ValueError(f"max_batch must be >= 1, got {self.max_batch}")

    @property
    def is_mock(self) -> bool:
        return self.endpoint_url.startswith(f"{MOCK_SCHEME}:")


@dataclass(frozen=True)
class LetterDistribution:
    """A probability distribution over the answer letters A-F."""

    probs: Mapping[str, float]

    def __post_init__(self):
        probs = {letter: float(self.probs.get(letter, 0.0)) for letter in LETTERS}
        for letter, p in probs.items():
            if not math.isfinite(p) or p < 0:
                raise ValueError(f"probability for {letter} is invalid: {p}")
        total = sum(probs.values())
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"letter probabilities sum to {total}, expected 1")
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_weights(cls, weights: Mapping[str, float]) -> "LetterDistribution":
        """Normalize non-negative weights; all-zero weights become uniform."""
        total = sum(weights.get(letter, 0.0) for letter in LETTERS)
        if total <= 0:
            return cls({letter: 1.0 / len(LETTERS) for letter in LETTERS})
        return cls({letter: weights.get(letter, 0.0) / total for letter in LETTERS})

    def argmax(self) -> str:
        """Most probable letter; ties resolve alphabetically (max keeps the first)."""
        return max(LETTERS, key=lambda letter: self.probs[letter])


class Embedder(Protocol):
    def embed(self, texts: Sequence[str]) -> list[np.ndarray]: ...


class RerankScorer(Protocol):
    def rerank_score(self, query: str, documents: Sequence[str]) -> list[float]: ...


class LetterChooser(Protocol):
    def choose_letter(self, system_prompt: str, user_prompt: str) -> LetterDistribution: ...


def l2_normalize(vector: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vector))
    if norm == 0.0:
        raise ShapeError("cannot normalize a zero vector")
    return vector / norm


def _check_texts(texts: Sequence[str]) -> None:
    if not texts:
        raise ValueError("texts must be non-empty")
    for i, text in enumerate(texts):
        if not text:
            raise ValueError(f"texts[{i}] is empty")


# --------------------------------------------------------------------------
# Deterministic mocks


def _stable_hash(data: str, salt: bytes) -> int:
    digest = hashlib.blake2b(data.encode("utf-8"), digest_size=8, person=salt).digest()
    return int.from_bytes(digest, "big")


def _lower_tokens(text: str) -> list[str]:
    return [t.lower() for t in token_texts(text)]


class MockEmbedder:
    """Hashed bag of word 1-grams and 2-grams, signed, L2-normalized.

    Lexically overlapping texts land on shared hash buckets, so cosine
    similarity tracks surface overlap. Good enough for planted-evidence
    end-to-end tests; useless as a semantic model.
    """

    def __init__(self, dim: int = DEFAULT_MOCK_DIM):
        if dim < 2:
            raise ValueError(f"dim must be >= 2, got {dim}")
        self.dim = dim

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        _check_texts(texts)
        return [self._vector(text) for text in texts]

    def _vector(self, text: str) -> np.ndarray:
        words = _lower_tokens(text)
        grams = words + [f"{a} {b}" for a, b in zip(words, words[1:])]
        v = np.zeros(self.dim, dtype=np.float64)
        for gram in grams:
            bucket = _stable_hash(gram, b"bucket") % self.dim
            sign = 1.0 if _stable_hash(gram, b"sign") % 2 == 0 else -1.0
            v[bucket] += sign
        if not v.any():
            v[0] = 1.0
        return l2_normalize(v)


class MockReranker:
    """Query-coverage scoring: |tokens(q) ∩ tokens(d)| / |tokens(q)|."""

    def rerank_score(self, query: str, documents: Sequence[str]) -> list[float]:
        if not documents:
            raise ValueError("documents must be non-empty")
        query_tokens = set(_lower_tokens(query))
        if not query_tokens:
            return [0.0] * len(documents)
        scores = []
        for doc in documents:
            overlap = len(query_tokens & set(_lower_tokens(doc)))
            scores.append(min(1.0, max(0.0, overlap / len(query_tokens))))
        return scores


_RANK_HEADER_RE = re.compile(r"^\[rank (\d+) \| .+? \| \d+\] ", re.M)
_OPTION_LINE_RE = re.compile(r"^([A-F])\) ", re.M)
_OPTIONS_HEADER = "Варіанти відповідей:\n"
_EXCERPTS_HEADER = "Надані уривки"
_REPEAT_MARKER = "\n\nЗапитання:"


class MockLetterChooser:
    """Pick letters by lexical overlap with the top-ranked excerpt.

    Operates at the wire level: parses the options block and the rank-1
    excerpt out of the answer prompt, then weights each letter by how much
    of its option text appears in that excerpt.
    """

    def choose_letter(self, system_prompt: str, user_prompt: str) -> LetterDistribution:
        if not system_prompt or not user_prompt:
            raise ValueError("prompts must be non-empty")
        options = self._parse_options(user_prompt)
        excerpt = self._top_excerpt(user_prompt)
        excerpt_tokens = set(_lower_tokens(excerpt)) if excerpt else set()
        weights: dict[str, float] = {}
        for letter, text in options.items():
            option_tokens = set(_lower_tokens(text))
            if not option_tokens or not excerpt_tokens:
                weights[letter] = 0.0
            else:
                weights[letter] = len(option_tokens & excerpt_tokens) / len(option_tokens)
        return LetterDistribution.from_weights(weights)

    @staticmethod
    def _parse_options(user_prompt: str) -> dict[str, str]:
        start = user_prompt.find(_OPTIONS_HEADER)
        if start < 0:
            raise ProtocolError("prompt has no options block")
        start += len(_OPTIONS_HEADER)
        end = user_prompt.find(_EXCERPTS_HEADER, start)
        block = user_prompt[start:end] if end >= 0 else user_prompt[start:]
        matches = list(_OPTION_LINE_RE.finditer(block))
        options: dict[str, str] = {}
        for i, m in enumerate(matches):
            tail = matches[i + 1].start() if i + 1 < len(matches) else len(block)
            options[m.group(1)] = block[m.end():tail].strip()
        return options

    @staticmethod
    def _top_excerpt(user_prompt: str) -> str:
        matches = list(_RANK_HEADER_RE.finditer(user_prompt))
        if not matches:
            return ""
        top = min(matches, key=lambda m: int(m.group(1)))
        cut = user_prompt.find(_REPEAT_MARKER, top.end())
        following = [m.start() for m in matches if m.start() > top.start()]
        if following:
            cut = min(cut, following[0]) if cut >= 0 else following[0]
        return user_prompt[top.end():cut] if cut >= 0 else user_prompt[top.end():]


# --------------------------------------------------------------------------
# HTTP clients


API_KEY_ENV = "PAGERAG_API_KEY"


class _HttpClient:
    def __init__(self, config: BackendConfig):
        self.config = config
        self._session = requests.Session()
        # Credentials come from the environment only and are never logged.
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            self._session.headers["Authorization"] = f"Bearer {api_key}"
        self._slots = threading.BoundedSemaphore(config.max_in_flight)
        self._rng = random.Random(0xC0FFEE)

    def _post(self, path: str, payload: dict) -> dict:
        """POST with bounded concurrency, retries, and jittered backoff."""
        url = self.config.endpoint_url.rstrip("/") + path
        attempts = self.config.retry.attempts
        last_error: Exception | None = None
        for attempt in range(attempts):
            if attempt:
                delay = self.config.retry.backoff * (2 ** (attempt - 1))
                time.sleep(delay * (0.5 + self._rng.random()))
            try:
                with self._slots:
                    response = self._session.post(
                        url, json=payload, timeout=self.config.timeout
                    )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if response.status_code in _RETRYABLE_STATUSES:
                last_error = BackendUnavailable(
                    f"{url} returned {response.status_code}", status=response.status_code
                )
                continue
            if response.status_code >= 400:
                raise BackendUnavailable(
                    f"{url} returned {response.status_code}: {response.text[:200]}",
                    status=response.status_code,
                )
            try:
                return response.json()
            except ValueError as exc:
                raise ProtocolError(f"{url} returned non-JSON body") from exc
        raise BackendUnavailable(
            f"{url} unreachable after {attempts} attempts: {last_error}",
            status=getattr(last_error, "status", None),
        )


class HttpEmbedder(_HttpClient):
    """OpenAI-compatible ``/v1/embeddings`` client with transparent batching."""

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        _check_texts(texts)
        vectors: list[np.ndarray] = []
        for start in range(0, len(texts), self.config.max_batch):
            batch = list(texts[start : start + self.config.max_batch])
            vectors.extend(self._embed_batch(batch))
        dims = {v.shape[0] for v in vectors}
        if len(dims) > 1:
            raise ShapeError(f"server returned mixed dimensions: {sorted(dims)}")
        return vectors

    def _embed_batch(self, batch: list[str]) -> list[np.ndarray]:
        body = self._post(
            "/v1/embeddings", {"model": self.config.model_name, "input": batch}
        )
        try:
            data = sorted(body["data"], key=lambda item: item["index"])
            raw = [np.asarray(item["embedding"], dtype=np.float64) for item in data]
        except (KeyError, TypeError) as exc:
            raise ProtocolError(f"bad embeddings response: {exc}") from exc
        if len(raw) != len(batch):
            raise ShapeError(f"asked for {len(batch)} embeddings, got {len(raw)}")
        out = []
        for v in raw:
            if v.ndim != 1 or not np.isfinite(v).all():
                raise ShapeError("embedding is not a finite 1-D vector")
            out.append(l2_normalize(v))
        return out


class HttpReranker(_HttpClient):
    """``/rerank`` client; accepts plain scores or (yes, no) logit pairs."""

    def rerank_score(self, query: str, documents: Sequence[str]) -> list[float]:
        if not documents:
            raise ValueError("documents must be non-empty")
        body = self._post(
            "/rerank",
            {
                "model": self.config.model_name,
                "query": query,
                "documents": list(documents),
            },
        )
        if "logits" in body:
            try:
                scores = [
                    1.0 / (1.0 + math.exp(-(float(yes) - float(no))))
                    for yes, no in body["logits"]
                ]
            except (TypeError, ValueError) as exc:
                raise ProtocolError(f"bad logits response: {exc}") from exc
        else:
            try:
                scores = [float(s) for s in body["scores"]]
            except (KeyError, TypeError, ValueError) as exc:
                raise ProtocolError(f"bad rerank response: {exc}") from exc
        if len(scores) != len(documents):
            raise ShapeError(f"asked for {len(documents)} scores, got {len(scores)}")
        for s in scores:
            if not math.isfinite(s):
                raise ShapeError(f"non-finite rerank score {s}")
        return [min(1.0, max(0.0, s)) for s in scores]


class HttpLetterChooser(_HttpClient):
    """Single-token ``/v1/chat/completions`` client constrained to A-F.

    First asks the server to restrict decoding to the six letters
    (``guided_choice``); if the server rejects that, falls back to a plain
    request and renormalizes the returned top log-probabilities over A-F.
    """

    def choose_letter(self, system_prompt: str, user_prompt: str) -> LetterDistribution:
        if not system_prompt or not user_prompt:
            raise ValueError("prompts must be non-empty")
        payload = {
            "model": self.config.model_name,
            "messages": [
                {"role": "system", "content": system_prompt},
                {"role": "user", "content": user_prompt},
            ],
            "max_tokens": 1,
            "logprobs": True,
            "top_logprobs": 20,
        }
        try:
            body = self._post(
                "/v1/chat/completions", {**payload, "guided_choice": list(LETTERS)}
            )
        except BackendUnavailable as exc:
            if exc.status is None or exc.status < 400 or exc.status >= 500:
                raise
            logger.debug("server rejected constrained decoding, retrying plain")
            body = self._post("/v1/chat/completions", payload)
        return self._parse_distribution(body)

    @staticmethod
    def _parse_distribution(body: dict) -> LetterDistribution:
        try:
            choice = body["choices"][0]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProtocolError("completion response has no choices") from exc
        logprobs = choice.get("logprobs") or {}
        content = logprobs.get("content") or []
        if content:
            weights: dict[str, float] = {}
            for entry in content[0].get("top_logprobs", []):
                token = str(entry.get("token", "")).strip()
                if token in LETTERS and "logprob" in entry:
                    weights[token] = weights.get(token, 0.0) + math.exp(float(entry["logprob"]))
            if weights:
                return LetterDistribution.from_weights(weights)
        text = str(choice.get("message", {}).get("content", "")).strip()
        if text in LETTERS:
            return LetterDistribution.from_weights({text: 1.0})
        raise ProtocolError("no usable letter probability in completion response")


def make_embedder(config: BackendConfig) -> Embedder:
    return MockEmbedder() if config.is_mock else HttpEmbedder(config)


def make_reranker(config: BackendConfig) -> RerankScorer:
    return MockReranker() if config.is_mock else HttpReranker(config)


def make_letter_chooser(config: BackendConfig) -> LetterChooser:
    return MockLetterChooser() if config.is_mock else HttpLetterChooser(config)
