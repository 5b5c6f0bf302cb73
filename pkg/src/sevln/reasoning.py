"""Prompt assembly and the decision step.

The prompt is a fixed sequence of sections. When the character budget is
exceeded, content is shed in a fixed order: oldest map annotations first,
then few-shot experiences (lowest score first). The task, instruction,
candidates, and output format are never shed; a budget too small for them
is an error.

decide() never returns an action outside {stop} plus the offered candidates,
no matter what the backend replies.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field

from . import prompts
from .backends import ChatRequest, ModelBackend
from .errors import BackendError, BudgetError, DecideError
from .memory import DecisionTriple
from .world import Action, Observation

log = logging.getLogger(__name__)

DEFAULT_PROMPT_BUDGET = 24000
DEFAULT_PARSE_RETRIES = 2

FALLBACK_THINKING = "fallback: unparseable model output"

_MAP_ANNOTATION_RE = re.compile(r"^step \d+ @ ")


@dataclass(frozen=True)
class DeciderConfig:
    cot_enabled: bool = True
    max_parse_retries: int = DEFAULT_PARSE_RETRIES
    budget: int = DEFAULT_PROMPT_BUDGET
    fallback: str = "stop"


@dataclass(frozen=True)
class PromptBundle:
    """Everything that goes into one decision prompt."""

    task_desc: str
    instruction: str
    map_text: str
    fewshot_text: str
    observation: Observation
    budget: int = DEFAULT_PROMPT_BUDGET
    cot_enabled: bool = True


def _candidate_section(observation: Observation) -> str:
    lines = [f"CANDIDATES at {observation.current}"]
    for candidate in observation.candidates:
        lines.append(
            f"- {candidate.target} | bearing {candidate.bearing:.1f} deg | {candidate.caption}"
        )
    return "\n".join(lines)


def _assemble(
    bundle: PromptBundle, map_lines: list[str], fewshot_blocks: list[str]
) -> str:
    sections = [
        "TASK\n" + bundle.task_desc,
        "INSTRUCTION\n" + bundle.instruction,
        "MAP\n" + "\n".join(map_lines) if map_lines else "MAP\n(empty)",
    ]
    if fewshot_blocks:
        sections.append("EXPERIENCE\n" + "\n\n".join(fewshot_blocks))
    sections.append(_candidate_section(bundle.observation))
    output_format = (
        prompts.OUTPUT_FORMAT_COT if bundle.cot_enabled else prompts.OUTPUT_FORMAT_ACTION_ONLY
    )
    sections.append("OUTPUT-FORMAT\n" + output_format)
    return "\n\n".join(sections)


def render_prompt(bundle: PromptBundle) -> str:
    """Render the prompt within the character budget.

    Section order is fixed: TASK, INSTRUCTION, MAP, EXPERIENCE, CANDIDATES,
    OUTPUT-FORMAT. An empty few-shot block omits the EXPERIENCE section
    entirely.
    """
    map_lines = bundle.map_text.splitlines() if bundle.map_text else []
    fewshot_blocks = (
        [b for b in bundle.fewshot_text.split("\n\n") if b.strip()]
        if bundle.fewshot_text.strip()
        else []
    )
    text = _assemble(bundle, map_lines, fewshot_blocks)
    while len(text) > bundle.budget:
        annotation_indexes = [
            i for i, line in enumerate(map_lines) if _MAP_ANNOTATION_RE.match(line)
        ]
        if annotation_indexes:
            # Oldest annotation goes first.
            map_lines.pop(annotation_indexes[0])
        elif fewshot_blocks:
            # Blocks are ordered by score, so the last is the lowest.
            fewshot_blocks.pop()
        else:
            raise BudgetError(
                f"prompt needs {len(text)} characters but the budget is {bundle.budget}"
            )
        text = _assemble(bundle, map_lines, fewshot_blocks)
    return text


class _ParseFailure(Exception):
    pass


def _extract_json_object(reply: str) -> dict:
    text = reply.strip()
    if text.startswith("```"):
        text = re.sub(r"^```[a-zA-Z]*\n?", "", text)
        text = re.sub(r"\n?```$", "", text).strip()
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        start, end = text.find("{"), text.rfind("}")
        if start < 0 or end <= start:
            raise _ParseFailure("reply contains no JSON object")
        try:
            data = json.loads(text[start : end + 1])
        except json.JSONDecodeError as exc:
            raise _ParseFailure(f"reply is not valid JSON: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise _ParseFailure("reply JSON is not an object")
    return data


def _parse_decision(reply: str, candidates: tuple[str, ...], cot_enabled: bool) -> DecisionTriple:
    data = _extract_json_object(reply)
    raw_action = data.get("action")
    if not isinstance(raw_action, str) or not raw_action.strip():
        raise _ParseFailure("'action' must be a non-empty string")
    token = raw_action.strip()
    if token == "stop":
        action = Action.stop()
    elif token in candidates:
        action = Action.move(token)
    else:
        raise _ParseFailure(f"action '{token}' is not 'stop' or a candidate id")
    if cot_enabled:
        thinking = data.get("thinking")
        planning = data.get("planning")
        if not isinstance(thinking, str) or not thinking.strip():
            raise _ParseFailure("'thinking' must be a non-empty string")
        if not isinstance(planning, str) or not planning.strip():
            raise _ParseFailure("'planning' must be a non-empty string")
        return DecisionTriple(thinking=thinking.strip(), planning=planning.strip(), action=action)
    return DecisionTriple(thinking="", planning="", action=action)


def decide(
    backend: ModelBackend,
    prompt: str,
    candidates: tuple[str, ...],
    config: DeciderConfig = DeciderConfig(),
) -> DecisionTriple:
    """One decision from the backend, constrained to the candidate set.

    Malformed replies are re-prompted up to max_parse_retries times; after
    that the agent stops in place rather than acting on garbage. Transport
    failures surface as a decide error.
    """
    attempts = config.max_parse_retries + 1
    current_prompt = prompt
    last_error = "no reply parsed"
    for attempt in range(attempts):
        request = ChatRequest(system=prompts.DECIDE_TASK, user=current_prompt)
        try:
            reply = backend.complete(request)
        except BackendError as exc:
            raise DecideError(f"decision backend failed: {exc}") from exc
        try:
            return _parse_decision(reply, candidates, config.cot_enabled)
        except _ParseFailure as exc:
            last_error = str(exc)
            log.debug("decision parse attempt %d failed: %s", attempt, last_error)
            current_prompt = (
                prompt
                + f"\n\nYour previous reply was not valid: {last_error}. "
                + "Reply again following OUTPUT-FORMAT exactly."
            )
    log.warning("decision fell back to stop after %d attempts: %s", attempts, last_error)
    return DecisionTriple(thinking=FALLBACK_THINKING, planning="fallback", action=Action.stop())
