"""Bundled fixture worlds."""

from __future__ import annotations

from pathlib import Path

from ..errors import ConfigError

_ROOT = Path(__file__).resolve().parent

# name -> (graph file, episodes file)
WORLDS = {
    "loft5": ("loft5_graph.json", "loft5_episodes.json"),
    "evolve12": ("evolve12_graph.json", "evolve12_episodes.json"),
}


def world_names() -> tuple[str, ...]:
    return tuple(sorted(WORLDS))


def graph_path(name: str) -> Path:
    if name not in WORLDS:
        raise ConfigError(f"unknown bundled world '{name}'; have {', '.join(world_names())}")
    return _ROOT / WORLDS[name][0]


def episodes_path(name: str) -> Path:
    if name not in WORLDS:
        raise ConfigError(f"unknown bundled world '{name}'; have {', '.join(world_names())}")
    return _ROOT / WORLDS[name][1]
