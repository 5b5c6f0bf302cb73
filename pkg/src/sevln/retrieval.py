"""Landmark extraction and experience retrieval.

A query is the L2-normalized embedding of the instruction's landmark words.
Experiences are scored by cosine similarity in one exhaustive pass over the
repository; ties go to the older entry.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .backends import ChatRequest, ModelBackend
from .errors import (
    BackendError,
    ConfigError,
    DimensionMismatchError,
    EmbeddingError,
    ExtractionError,
    SevlnError,
)
from .memory import ExperienceEntry, ExperienceRepo
from . import prompts

log = logging.getLogger(__name__)

DEFAULT_SHOTS = 2
EXPERIENCE_CHAR_CAP = 1200

# Glue words common in navigation instructions; never landmarks. Words of
# three characters or fewer are filtered by length before this list applies.
STOPWORDS = frozenset(
    {
        "walk", "head", "move", "turn", "stop", "wait", "stay", "keep", "take",
        "pass", "past", "cross", "leave", "enter", "exit", "reach", "continue",
        "then", "left", "right", "into", "onto", "down", "near", "beside",
        "toward", "towards", "until", "along", "across", "around", "through",
        "after", "before", "next", "just", "from", "that", "this", "there",
        "here", "your", "with", "straight", "ahead", "back", "again", "when",
        "where", "make", "slightly", "area", "side",
    }
)

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def _dedupe(items: Sequence[str]) -> tuple[str, ...]:
    seen: set[str] = set()
    out: list[str] = []
    for item in items:
        if item not in seen:
            seen.add(item)
            out.append(item)
    return tuple(out)


@dataclass(frozen=True)
class LandmarkSet:
    """Ordered, lowercase, deduplicated landmark terms. Never empty."""

    landmarks: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.landmarks:
            raise SevlnError("a landmark set cannot be empty")

    @staticmethod
    def from_terms(terms: Sequence[str]) -> "LandmarkSet":
        cleaned = [t.strip().lower() for t in terms if t and t.strip()]
        return LandmarkSet(landmarks=_dedupe(cleaned))

    def text(self) -> str:
        return " ".join(self.landmarks)


def fallback_landmarks(instruction: str) -> tuple[str, ...]:
    """Instruction tokens longer than three characters, minus glue words.

    Falls back further (keep glue words, then keep everything, then the whole
    instruction) so the result is never empty for a non-blank instruction.
    """
    tokens = tokenize(instruction)
    picked = [t for t in tokens if len(t) > 3 and t not in STOPWORDS]
    if picked:
        return _dedupe(picked)
    picked = [t for t in tokens if len(t) > 3]
    if picked:
        return _dedupe(picked)
    if tokens:
        return _dedupe(tokens)
    return (instruction.strip().lower(),)


def load_vocabulary(path: str | Path) -> frozenset[str]:
    """Plain-text vocabulary: one term per line, '#' starts a comment."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read vocabulary file {path}: {exc}") from exc
    terms = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip().lower()
        if line:
            terms.append(line)
    return frozenset(terms)


def _parse_json_array(reply: str) -> list[str] | None:
    text = reply.strip()
    if text.startswith("```"):
        text = re.sub(r"^```[a-zA-Z]*\n?", "", text)
        text = re.sub(r"\n?```$", "", text).strip()
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        start, end = text.find("["), text.rfind("]")
        if start < 0 or end <= start:
            return None
        try:
            data = json.loads(text[start : end + 1])
        except json.JSONDecodeError:
            return None
    if not isinstance(data, list):
        return None
    return [str(item) for item in data if isinstance(item, (str, int, float))]


def extract_landmarks(
    backend: ModelBackend,
    instruction: str,
    vocabulary: frozenset[str] | None = None,
) -> LandmarkSet:
    """Ask the backend for landmark nouns; fall back to instruction tokens.

    The backend reply is parsed as a JSON string array and optionally
    filtered to the vocabulary. Whenever parsing or filtering leaves nothing,
    the deterministic fallback applies, so the result is always non-empty.
    """
    if not instruction.strip():
        raise ExtractionError("instruction is empty")
    request = ChatRequest(
        system=prompts.LANDMARK_TASK,
        user=f"Instruction: {instruction}\nReply with a JSON array of landmark nouns.",
    )
    try:
        reply = backend.complete(request)
    except BackendError as exc:
        raise ExtractionError(f"landmark backend failed: {exc}") from exc
    terms = _parse_json_array(reply)
    if terms is None:
        terms = []
    cleaned = [t.strip().lower() for t in terms if t and t.strip()]
    if vocabulary is not None:
        cleaned = [t for t in cleaned if t in vocabulary]
    if not cleaned:
        cleaned = list(fallback_landmarks(instruction))
    return LandmarkSet.from_terms(cleaned)


# --- embedders --------------------------------------------------------------


class EmbeddingBackend:
    """Maps text to a fixed-dimension L2-normalized vector."""

    dimension: int

    def encode(self, text: str) -> tuple[float, ...]:
        raise NotImplementedError


def hash_bucket(token: str, dimension: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % dimension


class HashingEmbedder(EmbeddingBackend):
    """Deterministic bag-of-words embedder.

    Each token is hashed to a bucket, counts accumulate, and the vector is
    L2-normalized. Stable across runs and platforms because the hash is a
    fixed digest, not the per-process string hash.
    """

    def __init__(self, dimension: int = 768):
        if dimension < 1:
            raise ConfigError("embedder dimension must be positive")
        self.dimension = dimension

    def encode(self, text: str) -> tuple[float, ...]:
        counts = [0.0] * self.dimension
        for token in tokenize(text):
            counts[hash_bucket(token, self.dimension)] += 1.0
        norm = math.sqrt(sum(v * v for v in counts))
        if norm == 0.0:
            raise EmbeddingError("text produced no tokens to embed")
        return tuple(v / norm for v in counts)


class RemoteEmbedder(EmbeddingBackend):
    """Client for an embeddings endpoint; live use only, key from env."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        dimension: int = 768,
        api_key_env: str = "SEVLN_API_KEY",
        timeout: float = 30.0,
    ):
        if not endpoint or not model:
            raise ConfigError("remote embedder requires endpoint and model")
        self.endpoint = endpoint
        self.model = model
        self.dimension = dimension
        self.api_key_env = api_key_env
        self.timeout = timeout

    def encode(self, text: str) -> tuple[float, ...]:
        key = os.environ.get(self.api_key_env)
        if not key:
            raise ConfigError(f"environment variable {self.api_key_env} is not set")
        import requests

        try:
            response = requests.post(
                self.endpoint,
                json={"model": self.model, "input": text},
                headers={"Authorization": f"Bearer {key}"},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise EmbeddingError(f"embedding transport failure: {type(exc).__name__}") from exc
        if response.status_code != 200:
            raise EmbeddingError(f"embedding endpoint returned {response.status_code}")
        try:
            values = response.json()["data"][0]["embedding"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise EmbeddingError(f"malformed embedding response: {exc}") from exc
        vector = tuple(float(v) for v in values)
        if len(vector) != self.dimension:
            raise DimensionMismatchError(
                f"embedding endpoint returned dimension {len(vector)}, expected {self.dimension}"
            )
        return vector


@dataclass(frozen=True)
class QueryVector:
    """A non-zero embedding vector used to query the repository."""

    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.values:
            raise EmbeddingError("query vector is empty")
        if math.sqrt(sum(v * v for v in self.values)) <= 0.0:
            raise EmbeddingError("query vector has zero norm")

    @property
    def dimension(self) -> int:
        return len(self.values)


def embed(embedder: EmbeddingBackend, landmarks: LandmarkSet) -> QueryVector:
    """Embed the landmark terms joined by single spaces, in set order."""
    return QueryVector(values=tuple(embedder.encode(landmarks.text())))


def _cosine(a: Sequence[float], b: Sequence[float]) -> float:
    if len(a) != len(b):
        raise DimensionMismatchError(f"cosine over dimensions {len(a)} and {len(b)}")
    dot = 0.0
    norm_a = 0.0
    norm_b = 0.0
    for x, y in zip(a, b):
        dot += x * y
        norm_a += x * x
        norm_b += y * y
    if norm_a == 0.0 or norm_b == 0.0:
        raise EmbeddingError("cosine with a zero-norm vector")
    return dot / (math.sqrt(norm_a) * math.sqrt(norm_b))


def cosine(a: QueryVector | Sequence[float], b: QueryVector | Sequence[float]) -> float:
    va = a.values if isinstance(a, QueryVector) else a
    vb = b.values if isinstance(b, QueryVector) else b
    return _cosine(va, vb)


@dataclass(frozen=True)
class FewShotBlock:
    """Rendered few-shot text plus which entries produced it.

    entries_used pairs (created_seq, score) in rendering order; scores are
    non-increasing.
    """

    rendered: str
    entries_used: tuple[tuple[int, float], ...]


def _highlight_triple(entry: ExperienceEntry):
    for original, revised in zip(entry.original, entry.revised):
        if original != revised:
            return revised
    return entry.revised[-1] if entry.revised else None


def render_experience(entry: ExperienceEntry, ordinal: int) -> str:
    """One experience through the fixed template, capped at 1200 characters.

    When over the cap, the oldest scene descriptions are dropped first; a
    final hard cut applies only if a single description still overflows.
    """
    triple = _highlight_triple(entry)
    if triple is None:
        decision = "stop"
    else:
        decision = (
            f"thinking {triple.thinking or '(none)'}, "
            f"planning {triple.planning or '(none)'}, "
            f"action {triple.action.token()}"
        )
    descriptions = list(entry.descriptions)

    def build(descs: list[str]) -> str:
        situation = "; ".join(descs) if descs else "(no scene notes)"
        return (
            f"EXPERIENCE {ordinal} - landmarks: {', '.join(entry.landmarks)}; "
            f"situation: {situation}; corrected decision: {decision}"
        )

    text = build(descriptions)
    while len(text) > EXPERIENCE_CHAR_CAP and len(descriptions) > 1:
        descriptions.pop(0)
        text = build(descriptions)
    if len(text) > EXPERIENCE_CHAR_CAP:
        text = text[:EXPERIENCE_CHAR_CAP]
    return text


def retrieve(
    repo: ExperienceRepo,
    query: QueryVector,
    n: int = DEFAULT_SHOTS,
    exact_landmarks: LandmarkSet | None = None,
) -> FewShotBlock:
    """Top-n experiences by cosine score, rendered for the prompt.

    Every entry is scored; ordering is by descending score with ties going
    to the lower created_seq. n = 0 or an empty repository yields an empty
    block. exact_landmarks optionally pre-filters to entries whose landmark
    set matches exactly (off unless provided).
    """
    if n < 0:
        raise SevlnError("shot count cannot be negative")
    if query.dimension != repo.dimension:
        raise DimensionMismatchError(
            f"query dimension {query.dimension} does not match repository {repo.dimension}"
        )
    pool = repo.entries
    if exact_landmarks is not None:
        wanted = set(exact_landmarks.landmarks)
        pool = [e for e in pool if set(e.landmarks) == wanted]
    scored = [(cosine(query.values, e.embedding), e) for e in pool]
    scored.sort(key=lambda pair: (-pair[0], pair[1].created_seq))
    top = scored[:n]
    rendered = "\n\n".join(
        render_experience(entry, ordinal + 1) for ordinal, (_, entry) in enumerate(top)
    )
    return FewShotBlock(
        rendered=rendered,
        entries_used=tuple((entry.created_seq, score) for score, entry in top),
    )
