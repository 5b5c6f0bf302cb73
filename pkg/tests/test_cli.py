from __future__ import annotations

import json
from pathlib import Path

import pytest

from conftest import write_json
from sevln.cli import EXIT_CONFIG, EXIT_OK, EXIT_PARTIAL, main


def _scripted_config(tmp_path: Path, **extra) -> Path:
    payload = {
        "world": "loft5",
        "episodes": "loft5",
        "backend": {"kind": "scripted", "policy": "oracle"},
        "embedder": {"kind": "hashing", "dimension": 32},
        **extra,
    }
    return write_json(tmp_path / "config.json", payload)


def test_validate_bundled_world(capsys) -> None:
    assert main(["validate", "--world", "loft5", "--episodes", "loft5"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "ok: 5 nodes, 6 edges, 4 episodes" in out


def test_validate_rejects_broken_world(tmp_path: Path, capsys) -> None:
    graph = write_json(
        tmp_path / "graph.json",
        {"nodes": [{"id": "a", "pos": [0, 0, 0]}], "edges": [["a", "z"]]},
    )
    episodes = write_json(tmp_path / "episodes.json", [])
    code = main(["validate", "--world", str(graph), "--episodes", str(episodes)])
    assert code == EXIT_CONFIG
    assert "invalid:" in capsys.readouterr().err


def test_run_oracle_suite(tmp_path: Path, capsys) -> None:
    config = _scripted_config(tmp_path)
    assert main(["run", "--config", str(config)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "episodes: 4" in out
    assert "SR: 100.0%" in out
    assert "repo size: 0 -> 0" in out


def test_run_missing_world_fails(capsys) -> None:
    code = main(["run", "--world", "nowhere.json", "--episodes", "nowhere.json"])
    assert code == EXIT_CONFIG
    assert "error:" in capsys.readouterr().err


def test_run_error_episode_partial(tmp_path: Path, capsys) -> None:
    script = write_json(
        tmp_path / "script.json",
        {"entries": [{"reply": "[]"}], "on_exhausted": "error"},
    )
    config = _scripted_config(
        tmp_path, backend={"kind": "scripted", "policy": "script", "script_file": str(script)}
    )
    assert main(["run", "--config", str(config)]) == EXIT_PARTIAL
    assert "ended in error" in capsys.readouterr().err


def test_run_writes_reports(tmp_path: Path) -> None:
    config = _scripted_config(tmp_path)
    out_base = tmp_path / "runs"
    assert main(["run", "--config", str(config), "--out", str(out_base)]) == EXIT_OK
    run_dirs = list(out_base.iterdir())
    assert len(run_dirs) == 1
    report = json.loads((run_dirs[0] / "report.json").read_text(encoding="utf-8"))
    assert report["aggregates"]["sr_pct"] == 100.0
    assert (run_dirs[0] / "report.csv").exists()
    assert (run_dirs[0] / "episodes" / "loft5-01" / "map.txt").exists()


def test_flag_overrides_beat_config_file(tmp_path: Path, capsys) -> None:
    config = _scripted_config(tmp_path, mode="evaluate")
    repo = tmp_path / "repo.jsonl"
    stop_config = _scripted_config(
        tmp_path, backend={"kind": "scripted", "policy": "stop"}
    )
    # config says evaluate; the flag flips it to evolve and commits happen
    code = main(
        [
            "run",
            "--config",
            str(stop_config),
            "--mode",
            "evolve",
            "--repo",
            str(repo),
        ]
    )
    assert code == EXIT_OK
    assert "repo size: 0 -> 4" in capsys.readouterr().out
    assert repo.exists()


def test_sweep_requires_axis() -> None:
    with pytest.raises(SystemExit) as excinfo:
        main(["sweep", "--world", "loft5"])
    assert excinfo.value.code == 2


def test_sweep_shots(tmp_path: Path, capsys) -> None:
    config = _scripted_config(tmp_path)
    out_base = tmp_path / "sweeps"
    code = main(
        ["sweep", "--axis", "shots", "--config", str(config), "--out", str(out_base)]
    )
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "shots-0 (shots=0):" in out
    assert "sweep written to" in out
    sweep_dirs = list(out_base.iterdir())
    assert len(sweep_dirs) == 1
    assert (sweep_dirs[0] / "combined.csv").exists()
    assert (sweep_dirs[0] / "cells" / "shots-5" / "report.json").exists()


def test_sweep_grid_without_out(capsys) -> None:
    code = main(
        [
            "sweep",
            "--axis",
            "grid",
            "--world",
            "loft5",
            "--episodes",
            "loft5",
        ]
    )
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "grid-cot-refl" in out
    assert "grid-nocot-norefl" in out


def test_unknown_subcommand_exits() -> None:
    with pytest.raises(SystemExit):
        main(["polish"])
