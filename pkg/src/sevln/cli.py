"""Command line interface.

Exit codes: 0 on success, 1 for world or configuration errors, 2 when the
suite ran but some episodes or sweep cells failed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .errors import SevlnError
from .harness import RunConfig, resolve_world_paths, run_suite, run_sweep
from .world import load_world

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PARTIAL = 2


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--world", help="graph file or bundled world name")
    parser.add_argument("--episodes", help="episodes file or bundled world name")
    parser.add_argument("--config", help="JSON config file mirroring RunConfig")
    parser.add_argument("--mode", choices=["evaluate", "evolve"])
    parser.add_argument("--shots", type=int, help="few-shot experience count")
    parser.add_argument("--no-cot", action="store_true", help="action-only decisions")
    parser.add_argument("--no-reflection", action="store_true", help="skip the correction loop")
    parser.add_argument(
        "--no-evaluator", action="store_true", help="hide metrics from the corrector"
    )
    parser.add_argument("--repo", help="experience repository JSONL file")
    parser.add_argument("--out", help="output directory for reports")
    parser.add_argument("--seed", type=int, help="run seed recorded in reports")
    parser.add_argument("--workers", type=int, help="episode workers (evaluate mode only)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sevln",
        description="Self-evolving navigation agent over discrete graph worlds",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    run_parser = subparsers.add_parser("run", help="run one episode suite")
    _add_run_options(run_parser)

    sweep_parser = subparsers.add_parser("sweep", help="run an ablation sweep")
    sweep_parser.add_argument(
        "--axis", required=True, choices=["shots", "grid", "repo-size"]
    )
    _add_run_options(sweep_parser)

    validate_parser = subparsers.add_parser("validate", help="check world files")
    validate_parser.add_argument("--world", required=True)
    validate_parser.add_argument("--episodes", required=True)
    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides: dict = {}
    if args.world is not None:
        overrides["world"] = args.world
    if args.episodes is not None:
        overrides["episodes"] = args.episodes
    if args.mode is not None:
        overrides["mode"] = args.mode
    if args.shots is not None:
        overrides["shots"] = args.shots
    if args.no_cot:
        overrides["cot_enabled"] = False
    if args.no_reflection:
        overrides["reflection_enabled"] = False
    if args.no_evaluator:
        overrides["evaluator_enabled"] = False
    if args.repo is not None:
        overrides["repo"] = args.repo
    if args.out is not None:
        overrides["out"] = args.out
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    if overrides:
        config = dataclasses.replace(config, **overrides)
    config.validate()
    return config


def _print_aggregates(aggregates: dict) -> None:
    if aggregates["episodes"] == 0:
        print("episodes: 0 (aggregates undefined)")
        return
    print(
        f"episodes: {aggregates['episodes']}  "
        f"mean NE: {aggregates['mean_ne']:.3f} m  "
        f"SR: {aggregates['sr_pct']:.1f}%  "
        f"SPL: {aggregates['spl_pct']:.1f}%  "
        f"OSR: {aggregates['osr_pct']:.1f}%"
    )


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        config = _config_from_args(args)
        report = run_suite(config)
    except SevlnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _print_aggregates(report.aggregates())
    print(f"repo size: {report.repo_size_before} -> {report.repo_size_after}")
    if report.out_path is not None:
        print(f"report written to {report.out_path}")
    if any(r.reason == "error" for r in report.reports):
        failed = sum(1 for r in report.reports if r.reason == "error")
        print(f"warning: {failed} episode(s) ended in error", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def _cmd_sweep(args: argparse.Namespace) -> int:
    try:
        config = _config_from_args(args)
        sweep_dir, cells = run_sweep(config, args.axis)
    except SevlnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    partial = False
    for cell in cells:
        if cell.report is None:
            print(f"{cell.name}: error: {cell.error}", file=sys.stderr)
            partial = True
            continue
        aggregates = cell.report.aggregates()
        summary = ", ".join(f"{k}={v}" for k, v in cell.params.items())
        if aggregates["episodes"] == 0:
            print(f"{cell.name} ({summary}): 0 episodes")
        else:
            print(
                f"{cell.name} ({summary}): SR {aggregates['sr_pct']:.1f}%  "
                f"SPL {aggregates['spl_pct']:.1f}%  OSR {aggregates['osr_pct']:.1f}%  "
                f"mean NE {aggregates['mean_ne']:.3f} m"
            )
        if any(r.reason == "error" for r in cell.report.reports):
            partial = True
    if sweep_dir is not None:
        print(f"sweep written to {sweep_dir}")
    return EXIT_PARTIAL if partial else EXIT_OK


def _cmd_validate(args: argparse.Namespace) -> int:
    config = RunConfig(world=args.world, episodes=args.episodes)
    try:
        graph_file, episodes_file = resolve_world_paths(config)
        graph, episodes = load_world(graph_file, episodes_file)
    except SevlnError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(
        f"ok: {len(graph.node_ids)} nodes, {len(graph.edge_keys)} edges, "
        f"{len(episodes)} episodes"
    )
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "sweep":
        return _cmd_sweep(args)
    return _cmd_validate(args)


def entrypoint() -> None:
    sys.exit(main())
