"""Deterministic built-in backends for desk runs.

These compute replies from the episode instead of replaying a fixture file,
which keeps whole-suite runs reproducible without hand-writing a script per
episode. Replies are pure functions of (episode, call history, request), so
two identical runs produce byte-identical transcripts.

Policies:
  oracle      follows the episode's reference path, then stops
  stop        stops immediately at every decision
  experience  stops unless the prompt carries experience mentioning one of
              this episode's landmark terms, in which case it follows the
              reference path; corrections point back to the reference path
"""

from __future__ import annotations

import json
import re

from . import prompts
from .backends import ChatRequest, ModelBackend
from .errors import ConfigError
from .retrieval import fallback_landmarks
from .world import Episode, NavGraph

_DIVERGENCE_RE = re.compile(r"divergence step: (\d+|none)")
_EXPERIENCE_SECTION_RE = re.compile(r"\nEXPERIENCE\n(.*?)\n\nCANDIDATES at ", re.DOTALL)


class PolicyBackend(ModelBackend):
    def __init__(self, graph: NavGraph, episode: Episode, policy: str):
        super().__init__()
        if policy not in ("oracle", "stop", "experience"):
            raise ConfigError(f"unknown policy '{policy}'")
        self.graph = graph
        self.episode = episode
        self.policy = policy
        self.landmarks = fallback_landmarks(episode.instruction)
        self._decides = 0
        self._annotations = 0

    # -- role handlers -------------------------------------------------------

    def _landmark_reply(self) -> str:
        # Empty array pushes the extractor onto its deterministic fallback.
        return "[]"

    def _annotate_reply(self, request: ChatRequest) -> str:
        self._annotations += 1
        return f"plain interior, waypoint {self._annotations - 1}"

    def _follow_reply(self) -> str:
        position = self._decides - 1
        gt = self.episode.gt_path
        if position + 1 < len(gt):
            action = gt[position + 1]
            thinking = "the route continues from here"
            planning = "take the next hop on the planned route"
        else:
            action = "stop"
            thinking = "the route ends here"
            planning = "stop at the goal"
        return json.dumps({"thinking": thinking, "planning": planning, "action": action})

    def _stop_reply(self) -> str:
        return json.dumps(
            {
                "thinking": "nothing matches yet",
                "planning": "hold position",
                "action": "stop",
            }
        )

    def _relevant_experience(self, user: str) -> bool:
        match = _EXPERIENCE_SECTION_RE.search(user)
        if not match:
            return False
        section = match.group(1)
        return any(term in section for term in self.landmarks)

    def _decide_reply(self, request: ChatRequest) -> str:
        self._decides += 1
        if self.policy == "oracle":
            return self._follow_reply()
        if self.policy == "stop":
            return self._stop_reply()
        if self._relevant_experience(request.user):
            return self._follow_reply()
        return self._stop_reply()

    def _correct_reply(self, request: ChatRequest) -> str:
        match = _DIVERGENCE_RE.search(request.user)
        step = 0
        if match and match.group(1) != "none":
            step = int(match.group(1))
        node_match = re.search(rf"^step {step} @ (\S+) \|", request.user, re.MULTILINE)
        node = node_match.group(1) if node_match else self.episode.start
        gt = self.episode.gt_path
        if node in gt and gt.index(node) + 1 < len(gt):
            action = gt[gt.index(node) + 1]
        else:
            action = "stop"
        return json.dumps(
            {
                "step": step,
                "thinking": "the stop came before the goal was in range",
                "planning": "resume the planned route from this node",
                "action": action,
            }
        )

    def _reply(self, request: ChatRequest) -> str:
        system = request.system
        if system == prompts.LANDMARK_TASK:
            return self._landmark_reply()
        if system == prompts.ANNOTATE_TASK:
            return self._annotate_reply(request)
        if system == prompts.DECIDE_TASK:
            return self._decide_reply(request)
        if system == prompts.CORRECT_TASK:
            return self._correct_reply(request)
        # Unknown role: answer neutrally rather than failing a whole episode.
        return self._stop_reply()
