"""Discrete graph world: geometry, episodes, observations, and stepping.

A world is an undirected graph whose nodes carry metric (x, y, z) positions.
Edge weights are always recomputed from node positions, never taken on trust
from a file.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import (
    InvalidActionError,
    SevlnError,
    UnreachableError,
    WorldFormatError,
    WorldValidationError,
)

Position = tuple[float, float, float]

SUCCESS_RADIUS_M = 3.0
DEFAULT_MAX_STEPS = 20

# Weight stored in a file (if any) must agree with recomputed geometry to this.
WEIGHT_TOLERANCE = 1e-6


def euclidean(a: Position, b: Position) -> float:
    return math.sqrt((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2 + (a[2] - b[2]) ** 2)


def compass_bearing(origin: Position, target: Position) -> float:
    """Bearing from origin to target in degrees, in [0, 360).

    Measured in the horizontal plane against a fixed reference: 0 points
    along +y, 90 along +x. A fixed reference (rather than the direction of
    arrival) keeps observations a pure function of the current node.
    Vertical moves (no horizontal offset) get bearing 0.0 by convention.
    """
    dx = target[0] - origin[0]
    dy = target[1] - origin[1]
    if dx == 0.0 and dy == 0.0:
        return 0.0
    return math.degrees(math.atan2(dx, dy)) % 360.0


def _edge_key(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


class NavGraph:
    """Immutable undirected navigation graph with metric node positions."""

    def __init__(self, nodes: Mapping[str, Position], edges: Iterable[tuple[str, str]]):
        positions: dict[str, Position] = {}
        for node_id, pos in nodes.items():
            positions[str(node_id)] = (float(pos[0]), float(pos[1]), float(pos[2]))
        weights: dict[tuple[str, str], float] = {}
        adjacency: dict[str, set[str]] = {node_id: set() for node_id in positions}
        for a, b in edges:
            a, b = str(a), str(b)
            if a == b:
                raise WorldValidationError(f"self-loop on node '{a}' is not allowed")
            for end in (a, b):
                if end not in positions:
                    raise WorldValidationError(f"edge references unknown node id '{end}'")
            key = _edge_key(a, b)
            weight = euclidean(positions[a], positions[b])
            if weight <= 0.0:
                raise WorldValidationError(
                    f"edge {a}-{b} has zero length; endpoints share a position"
                )
            weights[key] = weight
            adjacency[a].add(b)
            adjacency[b].add(a)
        self._positions = positions
        self._weights = weights
        self._adjacency = {node: tuple(sorted(nbrs)) for node, nbrs in adjacency.items()}

    @property
    def node_ids(self) -> tuple[str, ...]:
        return tuple(sorted(self._positions))

    @property
    def edge_keys(self) -> tuple[tuple[str, str], ...]:
        return tuple(sorted(self._weights))

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._positions

    def position(self, node_id: str) -> Position:
        try:
            return self._positions[node_id]
        except KeyError:
            raise WorldValidationError(f"unknown node id '{node_id}'") from None

    def neighbors(self, node_id: str) -> tuple[str, ...]:
        if node_id not in self._positions:
            raise WorldValidationError(f"unknown node id '{node_id}'")
        return self._adjacency[node_id]

    def has_edge(self, a: str, b: str) -> bool:
        return _edge_key(a, b) in self._weights

    def weight(self, a: str, b: str) -> float:
        key = _edge_key(a, b)
        if key not in self._weights:
            raise WorldValidationError(f"no edge between '{a}' and '{b}'")
        return self._weights[key]

    def distance(self, a: str, b: str) -> float:
        """Straight-line distance between two node positions."""
        return euclidean(self.position(a), self.position(b))


@dataclass(frozen=True)
class Episode:
    """One navigation task over a loaded graph."""

    id: str
    instruction: str
    start: str
    goal: str
    gt_path: tuple[str, ...]
    captions: Mapping[tuple[str, str], str] = field(default_factory=dict)


@dataclass(frozen=True)
class Candidate:
    """One reachable neighbor as seen from the current node."""

    target: str
    bearing: float
    caption: str


@dataclass(frozen=True)
class Observation:
    current: str
    candidates: tuple[Candidate, ...]
    step_index: int

    def candidate_ids(self) -> tuple[str, ...]:
        return tuple(c.target for c in self.candidates)


@dataclass(frozen=True)
class Action:
    """Either stop in place or move to a named adjacent node."""

    kind: str
    target: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("stop", "move"):
            raise SevlnError(f"unknown action kind '{self.kind}'")
        if self.kind == "move" and not self.target:
            raise SevlnError("move action requires a target node id")
        if self.kind == "stop" and self.target is not None:
            raise SevlnError("stop action takes no target")

    @staticmethod
    def stop() -> "Action":
        return Action(kind="stop")

    @staticmethod
    def move(target: str) -> "Action":
        return Action(kind="move", target=target)

    def token(self) -> str:
        """Serialized form: the literal 'stop' or the target node id."""
        return "stop" if self.kind == "stop" else str(self.target)

    @staticmethod
    def from_token(token: str) -> "Action":
        return Action.stop() if token == "stop" else Action.move(token)


class EpisodeState:
    """Mutable per-episode runner state; owned by exactly one runner."""

    def __init__(self, graph: NavGraph, episode: Episode, max_steps: int = DEFAULT_MAX_STEPS):
        if episode.start not in graph:
            raise WorldValidationError(f"episode start '{episode.start}' not in graph")
        if max_steps < 1:
            raise SevlnError("max_steps must be at least 1")
        self.graph = graph
        self.episode = episode
        self.max_steps = max_steps
        self.trajectory: list[str] = [episode.start]
        self.terminated = False
        self.reason: str | None = None

    @property
    def current(self) -> str:
        return self.trajectory[-1]

    @property
    def steps_taken(self) -> int:
        return len(self.trajectory) - 1

    def terminate(self, reason: str) -> None:
        if reason not in ("stopped", "max-steps", "error"):
            raise SevlnError(f"unknown termination reason '{reason}'")
        self.terminated = True
        self.reason = reason


def observe(graph: NavGraph, state: EpisodeState) -> Observation:
    """Observation at the current node: every adjacent node is a candidate.

    Candidates are sorted by bearing, ties broken by node id, so the order
    is deterministic for a given graph and node.
    """
    if state.terminated:
        raise SevlnError("cannot observe a terminated episode")
    current = state.current
    origin = graph.position(current)
    candidates = []
    for target in graph.neighbors(current):
        caption = state.episode.captions.get((current, target))
        if caption is None:
            caption = f"unlabeled view toward {target}"
        candidates.append(
            Candidate(target=target, bearing=compass_bearing(origin, graph.position(target)), caption=caption)
        )
    if not candidates:
        raise SevlnError(f"node '{current}' has no neighbors to observe")
    candidates.sort(key=lambda c: (c.bearing, c.target))
    return Observation(current=current, candidates=tuple(candidates), step_index=state.steps_taken)


def step(state: EpisodeState, action: Action) -> EpisodeState:
    """Apply one action to the episode state.

    Stop terminates with reason 'stopped'. A move must target a node adjacent
    to the current one; reaching the step limit terminates with 'max-steps'.
    An invalid move raises and leaves the state unchanged.
    """
    if state.terminated:
        raise InvalidActionError("episode already terminated")
    if action.kind == "stop":
        state.terminate("stopped")
        return state
    target = action.target
    assert target is not None
    if target not in state.graph:
        raise InvalidActionError(f"move target '{target}' is not a node in the graph")
    if not state.graph.has_edge(state.current, target):
        raise InvalidActionError(
            f"move target '{target}' is not adjacent to '{state.current}'"
        )
    state.trajectory.append(target)
    if state.steps_taken >= state.max_steps:
        state.terminate("max-steps")
    return state


def shortest_path_length(graph: NavGraph, a: str, b: str) -> float:
    """Weighted shortest-path (geodesic) distance between two nodes."""
    if a not in graph:
        raise WorldValidationError(f"unknown node id '{a}'")
    if b not in graph:
        raise WorldValidationError(f"unknown node id '{b}'")
    if a == b:
        return 0.0
    dist = {a: 0.0}
    heap: list[tuple[float, str]] = [(0.0, a)]
    done: set[str] = set()
    while heap:
        d, node = heapq.heappop(heap)
        if node in done:
            continue
        if node == b:
            return d
        done.add(node)
        for nbr in graph.neighbors(node):
            nd = d + graph.weight(node, nbr)
            if nd < dist.get(nbr, math.inf):
                dist[nbr] = nd
                heapq.heappush(heap, (nd, nbr))
    raise UnreachableError(f"no path from '{a}' to '{b}'")


def path_length(graph: NavGraph, nodes: Sequence[str]) -> float:
    """Sum of edge weights along a node sequence; every hop must be an edge."""
    total = 0.0
    for a, b in zip(nodes, nodes[1:]):
        total += graph.weight(a, b)
    return total


def within_success_radius(graph: NavGraph, a: str, goal: str) -> bool:
    """True when the straight-line distance to the goal is at most 3.0 m.

    The boundary is inclusive: exactly 3.0 m counts as success.
    """
    return graph.distance(a, goal) <= SUCCESS_RADIUS_M


# --- file loading -----------------------------------------------------------


def _load_json(path: str | Path) -> object:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise WorldFormatError(f"cannot read file: {exc}", path=str(p)) from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise WorldFormatError(f"invalid JSON: {exc}", path=str(p)) from exc


def _parse_graph(data: object, path: str) -> NavGraph:
    if not isinstance(data, dict):
        raise WorldFormatError("graph file must be a JSON object", path=path)
    raw_nodes = data.get("nodes")
    raw_edges = data.get("edges")
    if not isinstance(raw_nodes, list) or not isinstance(raw_edges, list):
        raise WorldFormatError("graph file needs 'nodes' and 'edges' lists", path=path)
    nodes: dict[str, Position] = {}
    for i, rec in enumerate(raw_nodes):
        locus = f"nodes[{i}]"
        if not isinstance(rec, dict) or "id" not in rec or "pos" not in rec:
            raise WorldFormatError("node record needs 'id' and 'pos'", path=path, locus=locus)
        node_id = str(rec["id"])
        pos = rec["pos"]
        if not isinstance(pos, list) or len(pos) != 3:
            raise WorldFormatError("'pos' must be a list of three numbers", path=path, locus=locus)
        try:
            coords = (float(pos[0]), float(pos[1]), float(pos[2]))
        except (TypeError, ValueError):
            raise WorldFormatError("'pos' must be numeric", path=path, locus=locus) from None
        if node_id in nodes:
            raise WorldValidationError(f"duplicate node id '{node_id}'", path=path, locus=locus)
        nodes[node_id] = coords
    edges: list[tuple[str, str]] = []
    seen: set[tuple[str, str]] = set()
    for i, rec in enumerate(raw_edges):
        locus = f"edges[{i}]"
        if not isinstance(rec, list) or len(rec) < 2:
            raise WorldFormatError("edge record must be a pair of node ids", path=path, locus=locus)
        a, b = str(rec[0]), str(rec[1])
        for end in (a, b):
            if end not in nodes:
                raise WorldValidationError(
                    f"edge references unknown node id '{end}'", path=path, locus=locus
                )
        if a == b:
            raise WorldValidationError(f"self-loop on node '{a}'", path=path, locus=locus)
        key = _edge_key(a, b)
        if key in seen:
            raise WorldValidationError(f"duplicate edge {a}-{b}", path=path, locus=locus)
        seen.add(key)
        # Optional third element is a stored weight; check it, never trust it.
        if len(rec) >= 3:
            try:
                stored = float(rec[2])
            except (TypeError, ValueError):
                raise WorldFormatError("stored edge weight must be numeric", path=path, locus=locus) from None
            actual = euclidean(nodes[a], nodes[b])
            if abs(stored - actual) > WEIGHT_TOLERANCE:
                raise WorldValidationError(
                    f"stored weight {stored} for edge {a}-{b} disagrees with geometry {actual:.6f}",
                    path=path,
                    locus=locus,
                )
        edges.append((a, b))
    try:
        return NavGraph(nodes, edges)
    except WorldValidationError as exc:
        raise WorldValidationError(str(exc), path=path) from exc


def _parse_episodes(data: object, graph: NavGraph, path: str) -> list[Episode]:
    if not isinstance(data, list):
        raise WorldFormatError("episodes file must be a JSON array", path=path)
    episodes: list[Episode] = []
    seen_ids: set[str] = set()
    for i, rec in enumerate(data):
        locus = f"episodes[{i}]"
        if not isinstance(rec, dict):
            raise WorldFormatError("episode record must be an object", path=path, locus=locus)
        missing = [k for k in ("id", "instruction", "start", "goal", "gt_path") if k not in rec]
        if missing:
            raise WorldFormatError(
                f"episode record missing fields: {', '.join(missing)}", path=path, locus=locus
            )
        ep_id = str(rec["id"])
        locus = f"episodes[{i}] id={ep_id}"
        if ep_id in seen_ids:
            raise WorldValidationError(f"duplicate episode id '{ep_id}'", path=path, locus=locus)
        seen_ids.add(ep_id)
        instruction = str(rec["instruction"])
        if not instruction.strip():
            raise WorldValidationError("instruction must be non-empty", path=path, locus=locus)
        start, goal = str(rec["start"]), str(rec["goal"])
        for node_id in (start, goal):
            if node_id not in graph:
                raise WorldValidationError(
                    f"unknown node id '{node_id}'", path=path, locus=locus
                )
        gt_raw = rec["gt_path"]
        if not isinstance(gt_raw, list) or not gt_raw:
            raise WorldFormatError("'gt_path' must be a non-empty list", path=path, locus=locus)
        gt_path = tuple(str(n) for n in gt_raw)
        for node_id in gt_path:
            if node_id not in graph:
                raise WorldValidationError(
                    f"gt_path references unknown node id '{node_id}'", path=path, locus=locus
                )
        if gt_path[0] != start or gt_path[-1] != goal:
            raise WorldValidationError(
                "gt_path must begin at start and end at goal", path=path, locus=locus
            )
        for a, b in zip(gt_path, gt_path[1:]):
            if not graph.has_edge(a, b):
                raise WorldValidationError(
                    f"gt_path hop {a}->{b} is not an edge", path=path, locus=locus
                )
        captions: dict[tuple[str, str], str] = {}
        raw_captions = rec.get("captions", {})
        if raw_captions is not None:
            if not isinstance(raw_captions, dict):
                raise WorldFormatError("'captions' must be an object", path=path, locus=locus)
            for key, text in raw_captions.items():
                if "->" not in key:
                    raise WorldFormatError(
                        f"caption key '{key}' must look like 'a->b'", path=path, locus=locus
                    )
                a, _, b = key.partition("->")
                a, b = a.strip(), b.strip()
                for end in (a, b):
                    if end not in graph:
                        raise WorldValidationError(
                            f"caption references unknown node id '{end}'", path=path, locus=locus
                        )
                if not graph.has_edge(a, b):
                    raise WorldValidationError(
                        f"caption key {a}->{b} is not an edge", path=path, locus=locus
                    )
                captions[(a, b)] = str(text)
        try:
            shortest_path_length(graph, start, goal)
        except UnreachableError:
            raise WorldValidationError(
                f"goal '{goal}' is unreachable from start '{start}'", path=path, locus=locus
            ) from None
        episodes.append(
            Episode(
                id=ep_id,
                instruction=instruction,
                start=start,
                goal=goal,
                gt_path=gt_path,
                captions=captions,
            )
        )
    return episodes


def load_world(graph_file: str | Path, episodes_file: str | Path) -> tuple[NavGraph, list[Episode]]:
    """Load and validate a graph file plus its episode set."""
    graph = _parse_graph(_load_json(graph_file), str(graph_file))
    episodes = _parse_episodes(_load_json(episodes_file), graph, str(episodes_file))
    return graph, episodes
