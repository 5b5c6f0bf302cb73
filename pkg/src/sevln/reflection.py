"""Outcome evaluation and the experience correction loop.

evaluate() turns a finished trajectory into metric scores. correct() asks
the backend to revise the first unreasonable decision of a failed episode,
validating the revision against what was actually available at that step.
commit() embeds the episode's landmarks and stores the experience.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass

from . import prompts
from .backends import ChatRequest, ModelBackend
from .errors import BackendError, SevlnError
from .memory import (
    DecisionTriple,
    ExperienceEntry,
    ExperienceRepo,
    TopoMap,
    render_map,
)
from .reasoning import DeciderConfig, _ParseFailure, _extract_json_object
from .retrieval import EmbeddingBackend, LandmarkSet, embed
from .world import (
    Action,
    Episode,
    EpisodeState,
    NavGraph,
    path_length,
    shortest_path_length,
    within_success_radius,
)

log = logging.getLogger(__name__)


@dataclass
class MetricReport:
    """Scores for one finished episode.

    ne is the geodesic distance from the final node to the goal; sr is the
    3 m success indicator; spl weights success by path efficiency; osr is 1
    when any visited node came within the success radius. divergence_step is
    the first trajectory index that departs the reference path, absent when
    the trajectory is a prefix of it. reason carries the termination reason
    for reporting.
    """

    episode_id: str
    ne: float
    sr: int
    spl: float
    osr: int
    divergence_step: int | None
    reason: str | None = None

    def check_invariants(self) -> None:
        if not (0.0 <= self.spl <= 1.0):
            raise SevlnError(f"spl {self.spl} outside [0, 1]")
        if self.spl > self.sr + 1e-12:
            raise SevlnError(f"spl {self.spl} exceeds sr {self.sr}")
        if self.osr < self.sr:
            raise SevlnError(f"osr {self.osr} below sr {self.sr}")
        if self.ne < 0.0:
            raise SevlnError(f"ne {self.ne} negative")


def divergence_step(trajectory: tuple[str, ...], gt_path: tuple[str, ...]) -> int | None:
    """First index where the trajectory departs the reference path.

    A trajectory that is a prefix of (or equal to) the reference has no
    divergence. One that follows the whole reference and keeps going
    diverges at the first extra index.
    """
    for i, node in enumerate(trajectory):
        if i >= len(gt_path):
            return i
        if node != gt_path[i]:
            return i
    return None


def evaluate(graph: NavGraph, episode: Episode, state: EpisodeState) -> MetricReport:
    """Score a terminated episode against its reference path."""
    if not state.terminated:
        raise SevlnError("cannot evaluate an episode that has not terminated")
    trajectory = tuple(state.trajectory)
    final = trajectory[-1]
    ne = shortest_path_length(graph, final, episode.goal)
    sr = 1 if within_success_radius(graph, final, episode.goal) else 0
    shortest = shortest_path_length(graph, episode.start, episode.goal)
    travelled = path_length(graph, trajectory)
    if shortest == 0.0 and travelled == 0.0:
        spl = float(sr)
    else:
        spl = sr * (shortest / max(travelled, shortest))
    osr = 1 if any(within_success_radius(graph, node, episode.goal) for node in trajectory) else 0
    report = MetricReport(
        episode_id=episode.id,
        ne=ne,
        sr=sr,
        spl=spl,
        osr=osr,
        divergence_step=divergence_step(trajectory, episode.gt_path),
        reason=state.reason,
    )
    report.check_invariants()
    return report


def _correction_prompt(topo: TopoMap, report: MetricReport, include_metrics: bool) -> str:
    sections = ["EPISODE REVIEW"]
    if include_metrics:
        sections.append(
            f"metrics: NE={report.ne:.3f} m; SR={report.sr}; "
            f"SPL={report.spl:.3f}; OSR={report.osr}"
        )
        if report.divergence_step is None:
            sections.append("divergence step: none")
        else:
            sections.append(f"divergence step: {report.divergence_step}")
    sections.append("")
    sections.append("MAP")
    sections.append(render_map(topo).rstrip("\n"))
    sections.append("")
    sections.append("OUTPUT-FORMAT")
    sections.append(prompts.OUTPUT_FORMAT_CORRECTION)
    return "\n".join(sections)


def _parse_correction(
    reply: str, decided: list, candidates_per_step: list[tuple[str, ...]]
) -> tuple[int, DecisionTriple]:
    data = _extract_json_object(reply)
    raw_step = data.get("step")
    if isinstance(raw_step, bool) or not isinstance(raw_step, int):
        raise _ParseFailure("'step' must be an integer")
    if not 0 <= raw_step < len(decided):
        raise _ParseFailure(
            f"step {raw_step} outside the decided range 0..{len(decided) - 1}"
        )
    raw_action = data.get("action")
    if not isinstance(raw_action, str) or not raw_action.strip():
        raise _ParseFailure("'action' must be a non-empty string")
    token = raw_action.strip()
    if token == "stop":
        action = Action.stop()
    elif token in candidates_per_step[raw_step]:
        action = Action.move(token)
    else:
        raise _ParseFailure(
            f"action '{token}' was not a candidate at step {raw_step}"
        )
    thinking = data.get("thinking")
    planning = data.get("planning")
    if not isinstance(thinking, str) or not thinking.strip():
        raise _ParseFailure("'thinking' must be a non-empty string")
    if not isinstance(planning, str) or not planning.strip():
        raise _ParseFailure("'planning' must be a non-empty string")
    return raw_step, DecisionTriple(
        thinking=thinking.strip(), planning=planning.strip(), action=action
    )


def correct(
    backend: ModelBackend,
    topo: TopoMap,
    report: MetricReport,
    *,
    force: bool = False,
    include_metrics: bool = True,
    config: DeciderConfig = DeciderConfig(),
) -> list[DecisionTriple] | None:
    """Revise the first unreasonable decision of a failed episode.

    Returns the original decision list with exactly one triple replaced, or
    the originals unchanged when force is used on a successful episode.
    Returns None (correction skipped) when the backend cannot produce a
    valid revision; this never raises on bad model output. include_metrics
    False withholds the metric numbers and divergence hint from the prompt.
    """
    decided = topo.decided_annotations()
    originals = [a.triple for a in decided]
    if report.sr == 1:
        if not force:
            raise SevlnError("correction requires a failed episode unless forced")
        return list(originals)
    if not originals:
        log.warning("episode %s has no decisions to correct", topo.episode_id)
        return None
    candidates_per_step = [a.candidates for a in decided]
    user = _correction_prompt(topo, report, include_metrics)
    attempts = config.max_parse_retries + 1
    current = user
    last_error = "no reply parsed"
    for attempt in range(attempts):
        request = ChatRequest(system=prompts.CORRECT_TASK, user=current)
        try:
            reply = backend.complete(request)
        except BackendError as exc:
            log.warning("correction backend failed, skipping: %s", exc)
            return None
        try:
            step_index, triple = _parse_correction(reply, decided, candidates_per_step)
        except _ParseFailure as exc:
            last_error = str(exc)
            current = (
                user
                + f"\n\nYour previous reply was not valid: {last_error}. "
                + "Reply again following OUTPUT-FORMAT exactly."
            )
            continue
        revised = list(originals)
        revised[step_index] = triple
        return revised
    log.warning(
        "correction skipped for %s after %d attempts: %s",
        topo.episode_id,
        attempts,
        last_error,
    )
    return None


def commit(
    repo: ExperienceRepo,
    embedder: EmbeddingBackend,
    landmarks: LandmarkSet,
    topo: TopoMap,
    original: list[DecisionTriple],
    revised: list[DecisionTriple],
) -> ExperienceEntry:
    """Store one experience; entries equal to their original are flagged
    success_as_is."""
    query = embed(embedder, landmarks)
    entry = ExperienceEntry(
        landmarks=landmarks.landmarks,
        descriptions=tuple(a.description for a in topo.annotations),
        original=tuple(original),
        revised=tuple(revised),
        embedding=query.values,
        source_episode=topo.episode_id,
        success_as_is=tuple(revised) == tuple(original),
    )
    return repo.insert(entry)
