"""Episode runner, suite runner, and sweep driver.

Two modes: 'evaluate' treats the experience repository as read-only and may
run episodes concurrently; 'evolve' runs strictly in dataset order and
commits new experience between episodes. All desk-mode output is
deterministic: identical configs and seeds produce byte-identical reports.
"""

from __future__ import annotations

import concurrent.futures
import json
import logging
import shutil
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from . import data as bundled_data
from . import prompts
from .backends import BackendConfig, ModelBackend, Script, ScriptedBackend, RemoteBackend, transcript_to_jsonable
from .errors import ConfigError, SevlnError, UnreachableError
from .memory import (
    DecisionTriple,
    ExperienceEntry,
    ExperienceRepo,
    TopoMap,
    annotate,
    render_map,
    update_map,
)
from .policies import PolicyBackend
from .reasoning import DeciderConfig, PromptBundle, decide, render_prompt
from .reflection import MetricReport, commit, correct, evaluate
from .retrieval import (
    EmbeddingBackend,
    HashingEmbedder,
    LandmarkSet,
    RemoteEmbedder,
    embed,
    extract_landmarks,
    load_vocabulary,
    retrieve,
)
from .world import (
    Action,
    Episode,
    EpisodeState,
    NavGraph,
    load_world,
    observe,
    shortest_path_length,
    step,
)

log = logging.getLogger(__name__)

SWEEP_SHOTS = (0, 2, 5)
SWEEP_REPO_SIZES = (0, 10, 30, 50)
FIXTURE_REPO_SIZE = 50


@dataclass(frozen=True)
class EmbedderConfig:
    kind: str = "hashing"
    dimension: int = 64
    endpoint: str = ""
    model: str = ""
    api_key_env: str = "SEVLN_API_KEY"

    def build(self) -> EmbeddingBackend:
        if self.kind == "hashing":
            return HashingEmbedder(dimension=self.dimension)
        if self.kind == "remote":
            return RemoteEmbedder(
                endpoint=self.endpoint,
                model=self.model,
                dimension=self.dimension,
                api_key_env=self.api_key_env,
            )
        raise ConfigError(f"unknown embedder kind '{self.kind}'")


@dataclass(frozen=True)
class RunConfig:
    """Full configuration for a run; mirrors the CLI config file."""

    world: str = "loft5"
    episodes: str = "loft5"
    backend: BackendConfig = field(default_factory=BackendConfig)
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    shots: int = 2
    cot_enabled: bool = True
    reflection_enabled: bool = True
    evaluator_enabled: bool = True
    commit_successes: bool = True
    max_steps: int = 20
    repo: str | None = None
    mode: str = "evaluate"
    seed: int = 0
    out: str | None = None
    workers: int = 1
    vocab: str | None = None
    budget: int = 24000
    max_parse_retries: int = 2

    def validate(self) -> None:
        if self.mode not in ("evaluate", "evolve"):
            raise ConfigError(f"unknown mode '{self.mode}'")
        if self.shots < 0:
            raise ConfigError("shots cannot be negative")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be at least 1")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        self.backend.validate()

    @staticmethod
    def from_dict(data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {
            "world", "episodes", "backend", "embedder", "shots", "cot_enabled",
            "reflection_enabled", "evaluator_enabled", "commit_successes",
            "max_steps", "repo", "mode", "seed", "out", "workers", "vocab",
            "budget", "max_parse_retries",
        }
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        kwargs = dict(data)
        if "backend" in kwargs:
            kwargs["backend"] = BackendConfig(**kwargs["backend"])
        if "embedder" in kwargs:
            kwargs["embedder"] = EmbedderConfig(**kwargs["embedder"])
        try:
            config = RunConfig(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"bad config value: {exc}") from exc
        config.validate()
        return config

    @staticmethod
    def from_file(path: str | Path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load config file {path}: {exc}") from exc
        return RunConfig.from_dict(data)

    def echo(self) -> dict:
        """Stable description of the run for reports.

        Volatile values (output directory, per-cell scratch paths) stay out
        so identical runs produce identical reports.
        """
        return {
            "world": self.world,
            "episodes": self.episodes,
            "backend": {
                "kind": self.backend.kind,
                "policy": self.backend.policy if self.backend.kind == "scripted" else None,
                "endpoint": self.backend.endpoint or None,
                "model": self.backend.model or None,
                "api_key_env": self.backend.api_key_env,
            },
            "embedder": {"kind": self.embedder.kind, "dimension": self.embedder.dimension},
            "shots": self.shots,
            "cot_enabled": self.cot_enabled,
            "reflection_enabled": self.reflection_enabled,
            "evaluator_enabled": self.evaluator_enabled,
            "commit_successes": self.commit_successes,
            "max_steps": self.max_steps,
            "repo": self.repo,
            "mode": self.mode,
            "seed": self.seed,
            "workers": self.workers,
            "budget": self.budget,
            "max_parse_retries": self.max_parse_retries,
        }


def resolve_world_paths(config: RunConfig) -> tuple[Path, Path]:
    """Map world/episode settings to files, allowing bundled world names."""
    world = Path(config.world)
    if not world.exists() and config.world in bundled_data.WORLDS:
        world = bundled_data.graph_path(config.world)
    episodes = Path(config.episodes)
    if not episodes.exists() and config.episodes in bundled_data.WORLDS:
        episodes = bundled_data.episodes_path(config.episodes)
    return world, episodes


def build_backend(config: BackendConfig, graph: NavGraph, episode: Episode) -> ModelBackend:
    """One fresh backend per episode; backends are never shared."""
    config.validate()
    if config.kind == "remote":
        return RemoteBackend(config)
    if config.policy == "script":
        return ScriptedBackend(Script.from_file(config.script_file))
    return PolicyBackend(graph, episode, config.policy)


def _fallback_ne(graph: NavGraph, final: str, goal: str) -> float:
    try:
        return shortest_path_length(graph, final, goal)
    except UnreachableError:
        # Disconnected ends should not occur in validated worlds; report the
        # straight-line distance rather than dying mid-suite.
        return graph.distance(final, goal)


@dataclass
class EpisodeOutcome:
    report: MetricReport
    entry: ExperienceEntry | None
    landmarks: LandmarkSet | None
    topo: TopoMap
    backend: ModelBackend


def _run_episode_inner(
    config: RunConfig,
    graph: NavGraph,
    episode: Episode,
    repo: ExperienceRepo,
    embedder: EmbeddingBackend,
    vocabulary: frozenset[str] | None,
    allow_commit: bool,
) -> EpisodeOutcome:
    backend = build_backend(config.backend, graph, episode)
    state = EpisodeState(graph, episode, max_steps=config.max_steps)
    topo = TopoMap(episode.id)
    decider = DeciderConfig(
        cot_enabled=config.cot_enabled,
        max_parse_retries=config.max_parse_retries,
        budget=config.budget,
    )
    landmarks: LandmarkSet | None = None
    failure: SevlnError | None = None
    try:
        landmarks = extract_landmarks(backend, episode.instruction, vocabulary)
        query = embed(embedder, landmarks)
        fewshot = retrieve(repo, query, config.shots)
        while not state.terminated:
            observation = observe(graph, state)
            description = annotate(backend, prompts.ANNOTATE_TASK, observation)
            update_map(topo, observation, description)
            bundle = PromptBundle(
                task_desc=prompts.DECIDE_TASK,
                instruction=episode.instruction,
                map_text=render_map(topo).rstrip("\n"),
                fewshot_text=fewshot.rendered,
                observation=observation,
                budget=config.budget,
                cot_enabled=config.cot_enabled,
            )
            prompt = render_prompt(bundle)
            triple = decide(backend, prompt, observation.candidate_ids(), decider)
            topo.attach_triple(observation.step_index, triple)
            step(state, triple.action)
    except SevlnError as exc:
        failure = exc
        log.warning("episode %s aborted: %s", episode.id, exc)
        if not state.terminated:
            state.terminate("error")
        else:
            state.reason = "error"
    if failure is None:
        report = evaluate(graph, episode, state)
    else:
        # Errored episodes always score as failures.
        final = state.trajectory[-1]
        from .reflection import divergence_step

        report = MetricReport(
            episode_id=episode.id,
            ne=_fallback_ne(graph, final, episode.goal),
            sr=0,
            spl=0.0,
            osr=0,
            divergence_step=divergence_step(tuple(state.trajectory), episode.gt_path),
            reason="error",
        )
    entry: ExperienceEntry | None = None
    if (
        config.reflection_enabled
        and allow_commit
        and failure is None
        and landmarks is not None
    ):
        decided = topo.decided_annotations()
        originals = [a.triple for a in decided]
        if report.sr == 0 and originals:
            revised = correct(
                backend,
                topo,
                report,
                include_metrics=config.evaluator_enabled,
                config=decider,
            )
            if revised is not None:
                entry = commit(repo, embedder, landmarks, topo, originals, revised)
        elif report.sr == 1 and config.commit_successes and originals:
            entry = commit(repo, embedder, landmarks, topo, originals, list(originals))
    return EpisodeOutcome(
        report=report, entry=entry, landmarks=landmarks, topo=topo, backend=backend
    )


def _write_episode_artifacts(out_dir: Path, episode: Episode, outcome: EpisodeOutcome) -> None:
    safe_id = "".join(c if c.isalnum() or c in "-_." else "_" for c in episode.id)
    episode_dir = out_dir / "episodes" / safe_id
    episode_dir.mkdir(parents=True, exist_ok=True)
    (episode_dir / "map.txt").write_text(render_map(outcome.topo), encoding="utf-8")
    transcript = {
        "episode": episode.id,
        "transcript": transcript_to_jsonable(outcome.backend.transcript()),
    }
    (episode_dir / "transcript.json").write_text(
        json.dumps(transcript, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def run_episode(
    config: RunConfig,
    graph: NavGraph,
    episode: Episode,
    repo: ExperienceRepo,
    *,
    embedder: EmbeddingBackend | None = None,
    out_dir: Path | None = None,
) -> tuple[MetricReport, ExperienceEntry | None]:
    """Run one episode end to end; commits only happen in evolve mode."""
    config.validate()
    if embedder is None:
        embedder = config.embedder.build()
    vocabulary = load_vocabulary(config.vocab) if config.vocab else None
    outcome = _run_episode_inner(
        config,
        graph,
        episode,
        repo,
        embedder,
        vocabulary,
        allow_commit=config.mode == "evolve",
    )
    if out_dir is not None:
        _write_episode_artifacts(out_dir, episode, outcome)
    return outcome.report, outcome.entry


# --- suites -----------------------------------------------------------------


@dataclass
class SuiteReport:
    config_echo: dict
    reports: list[MetricReport]
    committed_seqs: list[int | None]
    repo_size_before: int
    repo_size_after: int
    out_path: Path | None = None

    def aggregates(self) -> dict:
        n = len(self.reports)
        if n == 0:
            return {
                "episodes": 0,
                "mean_ne": None,
                "sr_pct": None,
                "spl_pct": None,
                "osr_pct": None,
            }
        return {
            "episodes": n,
            "mean_ne": sum(r.ne for r in self.reports) / n,
            "sr_pct": 100.0 * sum(r.sr for r in self.reports) / n,
            "spl_pct": 100.0 * sum(r.spl for r in self.reports) / n,
            "osr_pct": 100.0 * sum(r.osr for r in self.reports) / n,
        }

    def to_json_dict(self) -> dict:
        episodes = []
        for report, seq in zip(self.reports, self.committed_seqs):
            episodes.append(
                {
                    "episode_id": report.episode_id,
                    "ne": report.ne,
                    "sr": report.sr,
                    "spl": report.spl,
                    "osr": report.osr,
                    "divergence_step": report.divergence_step,
                    "reason": report.reason,
                    "committed_seq": seq,
                }
            )
        return {
            "config": self.config_echo,
            "repo_size_before": self.repo_size_before,
            "repo_size_after": self.repo_size_after,
            "episodes": episodes,
            "aggregates": self.aggregates(),
        }

    def csv_text(self) -> str:
        lines = ["episode_id,ne,sr,spl,osr,divergence_step,reason"]
        for report in self.reports:
            divergence = "" if report.divergence_step is None else str(report.divergence_step)
            lines.append(
                f"{report.episode_id},{report.ne:.6f},{report.sr},{report.spl:.6f},"
                f"{report.osr},{divergence},{report.reason or ''}"
            )
        return "\n".join(lines) + "\n"

    def write(self, out_dir: Path) -> None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(
            json.dumps(self.to_json_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        (out_dir / "report.csv").write_text(self.csv_text(), encoding="utf-8")
        self.out_path = out_dir


def _timestamp_dir(base: Path, prefix: str) -> Path:
    stamp = time.strftime("%Y%m%dT%H%M%S", time.gmtime())
    candidate = base / f"{prefix}-{stamp}"
    counter = 1
    while candidate.exists():
        counter += 1
        candidate = base / f"{prefix}-{stamp}-{counter}"
    candidate.mkdir(parents=True)
    return candidate


def _load_repo(config: RunConfig, dimension: int) -> ExperienceRepo:
    if config.repo:
        repo_path = Path(config.repo)
        if repo_path.exists():
            return ExperienceRepo.load(repo_path, dimension=dimension)
        return ExperienceRepo(dimension=dimension, path=repo_path)
    return ExperienceRepo(dimension=dimension)


def run_suite(
    config: RunConfig,
    *,
    out_dir: Path | None = None,
    echo: dict | None = None,
) -> SuiteReport:
    """Run every episode of the configured world.

    In evolve mode episodes run sequentially and the repository is saved
    after each commit. In evaluate mode the repository is never written and
    episodes may run on a small worker pool; results keep dataset order.
    """
    config.validate()
    graph_file, episodes_file = resolve_world_paths(config)
    graph, episodes = load_world(graph_file, episodes_file)
    embedder = config.embedder.build()
    vocabulary = load_vocabulary(config.vocab) if config.vocab else None
    repo = _load_repo(config, embedder.dimension)
    size_before = len(repo)
    if out_dir is None and config.out:
        out_dir = _timestamp_dir(Path(config.out), "run")

    allow_commit = config.mode == "evolve"
    outcomes: list[EpisodeOutcome] = []
    if config.mode == "evolve" or config.workers == 1 or len(episodes) <= 1:
        for episode in episodes:
            outcome = _run_episode_inner(
                config, graph, episode, repo, embedder, vocabulary, allow_commit
            )
            if outcome.entry is not None and repo.path is not None:
                repo.save()
            outcomes.append(outcome)
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=config.workers) as pool:
            futures = [
                pool.submit(
                    _run_episode_inner,
                    config,
                    graph,
                    episode,
                    repo,
                    embedder,
                    vocabulary,
                    False,
                )
                for episode in episodes
            ]
            outcomes = [f.result() for f in futures]

    report = SuiteReport(
        config_echo=echo if echo is not None else config.echo(),
        reports=[o.report for o in outcomes],
        committed_seqs=[o.entry.created_seq if o.entry else None for o in outcomes],
        repo_size_before=size_before,
        repo_size_after=len(repo),
    )
    if out_dir is not None:
        report.write(out_dir)
        for episode, outcome in zip(episodes, outcomes):
            _write_episode_artifacts(out_dir, episode, outcome)
    return report


# --- sweeps -----------------------------------------------------------------


GRID_CELLS = (
    (False, False),
    (False, True),
    (True, False),
    (True, True),
)


def _grid_label(cot: bool, reflection: bool) -> tuple[str, str]:
    return ("w/ CoT" if cot else "w/o CoT", "w/ Reflection" if reflection else "w/o Reflection")


def fixture_repo(dimension: int, count: int = FIXTURE_REPO_SIZE) -> ExperienceRepo:
    """Deterministic synthetic repository used to seed repo-size sweeps."""
    pools = (
        ("piano", "hallway"),
        ("sofa", "fireplace"),
        ("kitchen", "pantry"),
        ("balcony", "staircase"),
        ("garden", "fountain"),
        ("mirror", "closet"),
        ("window", "curtain"),
        ("table", "lamp"),
        ("shelf", "ladder"),
        ("carpet", "doorway"),
    )
    embedder = HashingEmbedder(dimension=dimension)
    repo = ExperienceRepo(dimension=dimension)
    for i in range(count):
        pair = pools[i % len(pools)]
        landmarks = (pair[0], pair[1], f"spot{i:02d}")
        stop_triple = DecisionTriple(
            thinking="holding position", planning="wait here", action=Action.stop()
        )
        move_triple = DecisionTriple(
            thinking="the route continues",
            planning="take the next hop",
            action=Action.move(f"w{i:02d}"),
        )
        success = i % 2 == 0
        entry = ExperienceEntry(
            landmarks=landmarks,
            descriptions=(f"fixture scene {i:02d}",),
            original=(stop_triple,),
            revised=(stop_triple,) if success else (move_triple,),
            embedding=tuple(embedder.encode(" ".join(landmarks))),
            source_episode=f"fixture-{i:02d}",
            success_as_is=success,
        )
        repo.insert(entry)
    return repo


@dataclass
class SweepCell:
    name: str
    params: dict
    report: SuiteReport | None
    error: str | None = None


def _truncated_repo_file(source: ExperienceRepo, size: int, path: Path) -> Path:
    truncated = ExperienceRepo(dimension=source.dimension, path=path)
    truncated.entries = list(source.entries[:size])
    truncated.save()
    return path


def run_sweep(
    config: RunConfig,
    axis: str,
    *,
    out_dir: Path | None = None,
) -> tuple[Path | None, list[SweepCell]]:
    """Run one sweep axis; each cell gets an isolated repository copy.

    Axes: 'shots' varies the few-shot count, 'grid' crosses reasoning and
    reflection off/on, 'repo-size' truncates a seed repository to fixed
    sizes. A cell failure is recorded and the remaining cells still run.
    """
    config.validate()
    if axis not in ("shots", "grid", "repo-size"):
        raise ConfigError(f"unknown sweep axis '{axis}'")
    if out_dir is None and config.out:
        out_dir = _timestamp_dir(Path(config.out), "sweep")
    cells_dir = out_dir / "cells" if out_dir is not None else None

    plan: list[tuple[str, dict, dict]] = []  # (cell name, config overrides, label params)
    if axis == "shots":
        for n in SWEEP_SHOTS:
            plan.append((f"shots-{n}", {"shots": n}, {"shots": n}))
    elif axis == "grid":
        for cot, reflection in GRID_CELLS:
            cot_label, refl_label = _grid_label(cot, reflection)
            name = f"grid-{'cot' if cot else 'nocot'}-{'refl' if reflection else 'norefl'}"
            plan.append(
                (
                    name,
                    {"cot_enabled": cot, "reflection_enabled": reflection},
                    {"cot": cot_label, "reflection": refl_label},
                )
            )
    else:
        for size in SWEEP_REPO_SIZES:
            plan.append((f"repo-size-{size}", {"repo_size": size}, {"repo_size": size}))

    source_repo: ExperienceRepo | None = None
    if axis == "repo-size":
        dimension = config.embedder.dimension
        if config.repo and Path(config.repo).exists():
            source_repo = ExperienceRepo.load(config.repo, dimension=dimension)
        else:
            source_repo = fixture_repo(dimension)
        if len(source_repo) < max(SWEEP_REPO_SIZES):
            raise ConfigError(
                f"repo-size sweep needs at least {max(SWEEP_REPO_SIZES)} seed entries, "
                f"have {len(source_repo)}"
            )

    cells: list[SweepCell] = []
    for name, overrides, params in plan:
        cell_dir = None
        if cells_dir is not None:
            cell_dir = cells_dir / name
            cell_dir.mkdir(parents=True, exist_ok=True)
        cell_config = config
        if axis == "repo-size":
            assert source_repo is not None
            if cell_dir is None:
                raise ConfigError("repo-size sweep needs an output directory for cell repos")
            seed_file = _truncated_repo_file(
                source_repo, params["repo_size"], cell_dir / "seed_repo.jsonl"
            )
            cell_config = replace(config, repo=str(seed_file))
        else:
            cell_overrides = dict(overrides)
            if config.repo and Path(config.repo).exists() and cell_dir is not None:
                # Copy-on-start so one cell's commits never leak into another.
                cell_repo = cell_dir / "seed_repo.jsonl"
                shutil.copyfile(config.repo, cell_repo)
                cell_overrides["repo"] = str(cell_repo)
            cell_config = replace(config, **cell_overrides)
        echo = dict(config.echo())
        echo.update({k: v for k, v in params.items()})
        echo["sweep_axis"] = axis
        echo["sweep_cell"] = name
        echo["repo"] = config.repo
        for key, value in overrides.items():
            if key in echo:
                echo[key] = value
        try:
            report = run_suite(cell_config, out_dir=cell_dir, echo=echo)
            cells.append(SweepCell(name=name, params=params, report=report))
        except SevlnError as exc:
            log.error("sweep cell %s failed: %s", name, exc)
            cells.append(SweepCell(name=name, params=params, report=None, error=str(exc)))

    if out_dir is not None:
        (out_dir / "combined.csv").write_text(combined_csv(axis, cells), encoding="utf-8")
    return out_dir, cells


def _format_aggregate(value: float | None) -> str:
    return "" if value is None else f"{value:.6f}"


def combined_csv(axis: str, cells: Sequence[SweepCell]) -> str:
    param_columns = {
        "shots": ["shots"],
        "grid": ["cot", "reflection"],
        "repo-size": ["repo_size"],
    }[axis]
    header = (
        ["axis", "cell"]
        + param_columns
        + ["episodes", "mean_ne", "sr_pct", "spl_pct", "osr_pct", "repo_before", "repo_after", "status"]
    )
    lines = [",".join(header)]
    for cell in cells:
        row = [axis, cell.name]
        for column in param_columns:
            row.append(str(cell.params[column]))
        if cell.report is None:
            row += ["", "", "", "", "", "", "", f"error: {cell.error}"]
        else:
            agg = cell.report.aggregates()
            row += [
                str(agg["episodes"]),
                _format_aggregate(agg["mean_ne"]),
                _format_aggregate(agg["sr_pct"]),
                _format_aggregate(agg["spl_pct"]),
                _format_aggregate(agg["osr_pct"]),
                str(cell.report.repo_size_before),
                str(cell.report.repo_size_after),
                "ok",
            ]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"
