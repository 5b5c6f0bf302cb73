from __future__ import annotations

import json
import random
from pathlib import Path

import pytest

from sevln import data as bundled_data
from sevln.backends import Script, ScriptedBackend
from sevln.world import (
    Action,
    Episode,
    EpisodeState,
    NavGraph,
    load_world,
    step,
)

import oracles


@pytest.fixture(scope="session")
def loft5() -> tuple[NavGraph, list[Episode]]:
    return load_world(bundled_data.graph_path("loft5"), bundled_data.episodes_path("loft5"))


@pytest.fixture(scope="session")
def evolve12() -> tuple[NavGraph, list[Episode]]:
    return load_world(
        bundled_data.graph_path("evolve12"), bundled_data.episodes_path("evolve12")
    )


def make_graph(world: oracles.World) -> NavGraph:
    positions, edges, _ = world
    return NavGraph(positions, edges)


def make_episode(
    world: oracles.World, rng: random.Random, episode_id: str = "rand"
) -> Episode | None:
    """Random episode over an oracle world; gt_path is any simple path."""
    positions, _, adjacency = world
    names = sorted(positions)
    start, goal = rng.sample(names, 2)
    gt = oracles.first_simple_path(adjacency, start, goal)
    if gt is None:
        return None
    return Episode(
        id=episode_id,
        instruction="reach the marked goal",
        start=start,
        goal=goal,
        gt_path=tuple(gt),
    )


def run_random_walk(
    rng: random.Random, graph: NavGraph, episode: Episode, hops: int, max_steps: int = 64
) -> EpisodeState:
    """Drive a state through the real step() API with random adjacent moves."""
    state = EpisodeState(graph, episode, max_steps=max_steps)
    for _ in range(hops):
        if state.terminated:
            break
        nbrs = graph.neighbors(state.current)
        step(state, Action.move(rng.choice(list(nbrs))))
    if not state.terminated:
        step(state, Action.stop())
    return state


def scripted(pairs, on_exhausted: str = "repeat-last") -> ScriptedBackend:
    return ScriptedBackend(Script.from_pairs(pairs, on_exhausted=on_exhausted))


def decision_json(action: str, thinking: str = "t", planning: str = "p") -> str:
    return json.dumps({"thinking": thinking, "planning": planning, "action": action})


def write_json(path: Path, payload) -> Path:
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path
