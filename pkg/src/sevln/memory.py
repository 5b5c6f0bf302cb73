"""Two memory layers: a per-episode topological map and a persistent
experience repository.

The map records what the agent has seen and decided, step by step. Decision
triples are attached after the decision is made, so the map rendered into
the prompt for step t only ever shows decisions from steps before t.

The repository is a flat append-ordered list of experience entries with a
JSONL file format; lookup is always an exhaustive scan.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from .backends import ChatRequest, ModelBackend
from .errors import (
    AnnotationError,
    BackendError,
    DimensionMismatchError,
    InvalidEntryError,
    RepoFormatError,
    SevlnError,
)
from .world import Action, Observation

log = logging.getLogger(__name__)

DEFAULT_EMBEDDING_DIM = 768


@dataclass(frozen=True)
class DecisionTriple:
    """One decision: free-text thinking and planning plus the chosen action."""

    thinking: str
    planning: str
    action: Action

    def to_dict(self) -> dict:
        return {
            "thinking": self.thinking,
            "planning": self.planning,
            "action": self.action.token(),
        }

    @staticmethod
    def from_dict(data: dict) -> "DecisionTriple":
        return DecisionTriple(
            thinking=str(data["thinking"]),
            planning=str(data["planning"]),
            action=Action.from_token(str(data["action"])),
        )


@dataclass
class NodeAnnotation:
    """Scene description plus the (posterior) decision made at one step.

    candidates records the frontier visible at that step so a later review
    can check a revised action against what was actually available.
    """

    node: str
    description: str
    step_index: int
    candidates: tuple[str, ...]
    triple: DecisionTriple | None = None


class TopoMap:
    """Verbal topological map for a single episode."""

    def __init__(self, episode_id: str):
        self.episode_id = episode_id
        self.nodes: set[str] = set()
        self.edges: set[tuple[str, str]] = set()
        self.annotations: list[NodeAnnotation] = []

    def visited_nodes(self) -> tuple[str, ...]:
        return tuple(a.node for a in self.annotations)

    def attach_triple(self, step_index: int, triple: DecisionTriple) -> None:
        for annotation in self.annotations:
            if annotation.step_index == step_index:
                if annotation.triple is not None:
                    raise SevlnError(f"step {step_index} already has a decision attached")
                annotation.triple = triple
                return
        raise SevlnError(f"no annotation recorded for step {step_index}")

    def decided_annotations(self) -> list[NodeAnnotation]:
        """Annotations that carry a decision, in step order."""
        return [a for a in self.annotations if a.triple is not None]


def observation_payload(observation: Observation) -> str:
    """The observation as the annotator backend sees it: joined captions."""
    lines = [f"current node: {observation.current}"]
    for candidate in observation.candidates:
        lines.append(f"toward {candidate.target}: {candidate.caption}")
    return "\n".join(lines)


def annotate(backend: ModelBackend, task_desc: str, observation: Observation) -> str:
    """Ask the backend for a scene description of the current observation."""
    request = ChatRequest(system=task_desc, user=observation_payload(observation))
    try:
        reply = backend.complete(request)
    except BackendError as exc:
        raise AnnotationError(f"annotation backend failed: {exc}") from exc
    description = reply.strip()
    if not description:
        raise AnnotationError("annotation backend returned an empty description")
    return description


def update_map(
    topo: TopoMap,
    observation: Observation,
    description: str,
    triple: DecisionTriple | None = None,
) -> TopoMap:
    """Record one step: grow the visited subgraph and append an annotation.

    Frontier edges from the current node to every candidate are added, so
    candidate nodes appear in the map before they are visited. step_index
    values must arrive strictly increasing.
    """
    if topo.annotations and observation.step_index <= topo.annotations[-1].step_index:
        raise SevlnError(
            f"step_index {observation.step_index} does not follow "
            f"{topo.annotations[-1].step_index}"
        )
    topo.nodes.add(observation.current)
    for candidate in observation.candidates:
        topo.nodes.add(candidate.target)
        a, b = observation.current, candidate.target
        topo.edges.add((a, b) if a <= b else (b, a))
    topo.annotations.append(
        NodeAnnotation(
            node=observation.current,
            description=description,
            step_index=observation.step_index,
            candidates=observation.candidate_ids(),
            triple=triple,
        )
    )
    return topo


def _render_field(text: str) -> str:
    # Keep each annotation on one line with intact separators.
    return text.replace("\n", "; ").replace("|", "/")


def render_map(topo: TopoMap) -> str:
    """Deterministic text form of the map.

    Node list and adjacency are sorted; annotations follow in step order.
    Equal maps render to identical strings, so the text doubles as a
    structural fingerprint.
    """
    lines = [f"TOPO-MAP episode: {topo.episode_id}"]
    lines.append("nodes: " + ", ".join(sorted(topo.nodes)))
    lines.append("edges: " + ", ".join(f"{a}-{b}" for a, b in sorted(topo.edges)))
    lines.append("annotations:")
    for annotation in topo.annotations:
        if annotation.triple is None:
            thinking = planning = action = "(pending)"
        else:
            thinking = _render_field(annotation.triple.thinking) or "(none)"
            planning = _render_field(annotation.triple.planning) or "(none)"
            action = annotation.triple.action.token()
        lines.append(
            f"step {annotation.step_index} @ {annotation.node}"
            f" | scene: {_render_field(annotation.description)}"
            f" | thinking: {thinking}"
            f" | planning: {planning}"
            f" | action: {action}"
        )
    return "\n".join(lines) + "\n"


# --- experience repository --------------------------------------------------


@dataclass(frozen=True)
class ExperienceEntry:
    """One reusable experience: what was seen, decided, and how to do better.

    revised must differ from original in at least one triple unless the entry
    is flagged success_as_is. created_seq is assigned by the repository.
    """

    landmarks: tuple[str, ...]
    descriptions: tuple[str, ...]
    original: tuple[DecisionTriple, ...]
    revised: tuple[DecisionTriple, ...]
    embedding: tuple[float, ...]
    source_episode: str
    created_seq: int = -1
    success_as_is: bool = False

    def validate(self, dimension: int) -> None:
        if not self.landmarks:
            raise InvalidEntryError("entry needs at least one landmark")
        if len(self.embedding) != dimension:
            raise DimensionMismatchError(
                f"entry embedding has dimension {len(self.embedding)}, repository expects {dimension}"
            )
        if math.sqrt(sum(v * v for v in self.embedding)) <= 0.0:
            raise InvalidEntryError("entry embedding has zero norm")
        if self.revised == self.original and not self.success_as_is:
            raise InvalidEntryError(
                "revised decisions equal the originals but entry is not flagged success_as_is"
            )

    def to_json_line(self) -> str:
        record = {
            "landmarks": list(self.landmarks),
            "descriptions": list(self.descriptions),
            "original": [t.to_dict() for t in self.original],
            "revised": [t.to_dict() for t in self.revised],
            "embedding": list(self.embedding),
            "source_episode": self.source_episode,
            "created_seq": self.created_seq,
            "success_as_is": self.success_as_is,
        }
        return json.dumps(record, ensure_ascii=False)

    @staticmethod
    def from_json_dict(record: dict) -> "ExperienceEntry":
        required = (
            "landmarks",
            "descriptions",
            "original",
            "revised",
            "embedding",
            "source_episode",
            "created_seq",
        )
        missing = [k for k in required if k not in record]
        if missing:
            raise InvalidEntryError(f"entry missing fields: {', '.join(missing)}")
        return ExperienceEntry(
            landmarks=tuple(str(x) for x in record["landmarks"]),
            descriptions=tuple(str(x) for x in record["descriptions"]),
            original=tuple(DecisionTriple.from_dict(d) for d in record["original"]),
            revised=tuple(DecisionTriple.from_dict(d) for d in record["revised"]),
            embedding=tuple(float(v) for v in record["embedding"]),
            source_episode=str(record["source_episode"]),
            created_seq=int(record["created_seq"]),
            success_as_is=bool(record.get("success_as_is", False)),
        )


class ExperienceRepo:
    """Append-ordered store of experience entries with one fixed dimension."""

    def __init__(self, dimension: int = DEFAULT_EMBEDDING_DIM, path: str | Path | None = None):
        if dimension < 1:
            raise SevlnError("repository dimension must be positive")
        self.dimension = dimension
        self.path = Path(path) if path is not None else None
        self.entries: list[ExperienceEntry] = []

    def __len__(self) -> int:
        return len(self.entries)

    def next_seq(self) -> int:
        return self.entries[-1].created_seq + 1 if self.entries else 0

    def insert(self, entry: ExperienceEntry) -> ExperienceEntry:
        """Append an entry, assigning the next created_seq."""
        stamped = replace(entry, created_seq=self.next_seq())
        stamped.validate(self.dimension)
        self.entries.append(stamped)
        return stamped

    def save(self, path: str | Path | None = None) -> Path:
        """Write all entries as JSONL; the write is flushed before replace."""
        target = Path(path) if path is not None else self.path
        if target is None:
            raise SevlnError("no path configured for repository save")
        tmp = target.with_suffix(target.suffix + ".tmp")
        with open(tmp, "w", encoding="utf-8") as handle:
            for entry in self.entries:
                handle.write(entry.to_json_line() + "\n")
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp, target)
        self.path = target
        return target

    @classmethod
    def load(cls, path: str | Path, dimension: int = DEFAULT_EMBEDDING_DIM) -> "ExperienceRepo":
        repo = cls(dimension=dimension, path=path)
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise RepoFormatError(f"cannot read repository: {exc}", path=str(path)) from exc
        previous_seq: int | None = None
        for line_no, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RepoFormatError(
                    f"invalid JSON: {exc.msg}", path=str(path), line=line_no
                ) from exc
            try:
                entry = ExperienceEntry.from_json_dict(record)
                entry.validate(dimension)
            except SevlnError as exc:
                raise RepoFormatError(str(exc), path=str(path), line=line_no) from exc
            if previous_seq is not None and entry.created_seq <= previous_seq:
                raise RepoFormatError(
                    f"created_seq {entry.created_seq} does not increase past {previous_seq}",
                    path=str(path),
                    line=line_no,
                )
            previous_seq = entry.created_seq
            repo.entries.append(entry)
        return repo
