"""Chat-model backends: a deterministic scripted player and an HTTP client.

Both kinds record a full (request, reply) transcript so any run can be
audited or replayed.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .errors import BackendError, ConfigError

log = logging.getLogger(__name__)

DEFAULT_MAX_REPLY_CHARS = 4000
# Rough character budget to token budget conversion for the wire format.
CHARS_PER_TOKEN = 4


@dataclass(frozen=True)
class ChatRequest:
    """One chat turn: a system role text plus a user payload.

    image is an optional attachment reference for live multimodal use;
    scripted backends ignore it.
    """

    system: str
    user: str
    max_reply: int = DEFAULT_MAX_REPLY_CHARS
    session: str = ""
    image: str | None = None

    def __post_init__(self) -> None:
        if not self.system.strip():
            raise ConfigError("chat request needs a non-empty system text")
        if not self.user:
            raise ConfigError("chat request needs a non-empty user payload")
        if self.max_reply < 1:
            raise ConfigError("max_reply must be positive")


@dataclass(frozen=True)
class ScriptEntry:
    """matcher: int means call index, str means substring, None matches any."""

    matcher: int | str | None
    reply: str


@dataclass(frozen=True)
class Script:
    entries: tuple[ScriptEntry, ...]
    on_exhausted: str = "repeat-last"

    def __post_init__(self) -> None:
        if not self.entries:
            raise ConfigError("a script needs at least one entry")
        if self.on_exhausted not in ("repeat-last", "error"):
            raise ConfigError(f"unknown exhaustion policy '{self.on_exhausted}'")

    @staticmethod
    def from_pairs(pairs: Sequence[tuple[int | str | None, str]], on_exhausted: str = "repeat-last") -> "Script":
        return Script(
            entries=tuple(ScriptEntry(matcher=m, reply=r) for m, r in pairs),
            on_exhausted=on_exhausted,
        )

    @staticmethod
    def from_file(path: str | Path) -> "Script":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load script file {path}: {exc}") from exc
        if not isinstance(data, dict) or "entries" not in data:
            raise ConfigError(f"script file {path} needs an 'entries' list")
        entries = []
        for rec in data["entries"]:
            matcher = rec.get("match")
            if matcher is not None and not isinstance(matcher, (int, str)):
                raise ConfigError(f"script file {path}: bad matcher {matcher!r}")
            entries.append(ScriptEntry(matcher=matcher, reply=str(rec.get("reply", ""))))
        return Script(entries=tuple(entries), on_exhausted=data.get("on_exhausted", "repeat-last"))


@dataclass(frozen=True)
class BackendConfig:
    """Configuration for building a backend.

    kind 'remote' talks to a chat-completions endpoint; kind 'scripted'
    replays deterministic replies. For scripted backends, policy selects a
    built-in behavior ('oracle', 'stop', 'experience') or 'script' to replay
    a script file.
    """

    kind: str = "scripted"
    endpoint: str = ""
    model: str = ""
    api_key_env: str = "SEVLN_API_KEY"
    timeout: float = 30.0
    transport_retries: int = 2
    policy: str = "experience"
    script_file: str | None = None

    def validate(self) -> None:
        if self.kind not in ("remote", "scripted"):
            raise ConfigError(f"unknown backend kind '{self.kind}'")
        if self.kind == "remote":
            if not self.endpoint or not self.model:
                raise ConfigError("remote backend requires both endpoint and model")
        else:
            if self.policy not in ("oracle", "stop", "experience", "script"):
                raise ConfigError(f"unknown scripted policy '{self.policy}'")
            if self.policy == "script" and not self.script_file:
                raise ConfigError("scripted policy 'script' requires script_file")


class ModelBackend:
    """Base class; complete() appends every successful call to a transcript."""

    def __init__(self) -> None:
        self._transcript: list[tuple[ChatRequest, str]] = []

    def complete(self, request: ChatRequest) -> str:
        reply = self._reply(request)
        self._transcript.append((request, reply))
        return reply

    def _reply(self, request: ChatRequest) -> str:
        raise NotImplementedError

    def transcript(self) -> list[tuple[ChatRequest, str]]:
        return list(self._transcript)


class ScriptedBackend(ModelBackend):
    """Replays a script: entries are consumed in order, first match wins.

    For each call the entries after the cursor are scanned; the first whose
    matcher fits (index equals the call counter, substring occurs in the
    request text, or None) is consumed. With no match left, 'repeat-last'
    returns the most recent reply and 'error' raises.
    """

    def __init__(self, script: Script):
        super().__init__()
        self.script = script
        self._cursor = 0
        self._calls = 0
        self._last_reply: str | None = None

    def _matches(self, entry: ScriptEntry, request: ChatRequest, call_index: int) -> bool:
        if entry.matcher is None:
            return True
        if isinstance(entry.matcher, int):
            return entry.matcher == call_index
        return entry.matcher in (request.system + "\n" + request.user)

    def _reply(self, request: ChatRequest) -> str:
        call_index = self._calls
        self._calls += 1
        for idx in range(self._cursor, len(self.script.entries)):
            entry = self.script.entries[idx]
            if self._matches(entry, request, call_index):
                self._cursor = idx + 1
                self._last_reply = entry.reply
                return entry.reply
        if self.script.on_exhausted == "repeat-last":
            if self._last_reply is not None:
                return self._last_reply
            return self.script.entries[-1].reply
        raise BackendError(f"script exhausted at call {call_index}")


class RemoteBackend(ModelBackend):
    """Client for an OpenAI-style chat-completions endpoint.

    The API key is read from the configured environment variable right before
    the first network call and never logged. Transport failures and 5xx
    responses are retried with exponential backoff.
    """

    def __init__(
        self,
        config: BackendConfig,
        *,
        post: Callable[..., object] | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        super().__init__()
        config.validate()
        if config.kind != "remote":
            raise ConfigError("RemoteBackend requires kind 'remote'")
        self.config = config
        self._sleep = sleep
        if post is None:
            import requests

            self._post = requests.post
        else:
            self._post = post

    def _payload(self, request: ChatRequest) -> dict:
        user_content: object = request.user
        if request.image is not None:
            user_content = [
                {"type": "text", "text": request.user},
                {"type": "image_url", "image_url": {"url": request.image}},
            ]
        return {
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": user_content},
            ],
            "max_tokens": max(16, request.max_reply // CHARS_PER_TOKEN),
        }

    def _reply(self, request: ChatRequest) -> str:
        key = os.environ.get(self.config.api_key_env)
        if not key:
            raise ConfigError(
                f"environment variable {self.config.api_key_env} is not set"
            )
        import requests

        payload = self._payload(request)
        headers = {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}
        attempts = self.config.transport_retries + 1
        last_error = "no attempt made"
        for attempt in range(attempts):
            if attempt:
                self._sleep(0.5 * (2 ** (attempt - 1)))
            try:
                response = self._post(
                    self.config.endpoint,
                    json=payload,
                    headers=headers,
                    timeout=self.config.timeout,
                )
            except requests.RequestException as exc:
                last_error = f"transport failure: {type(exc).__name__}"
                log.warning("remote backend attempt %d failed: %s", attempt, last_error)
                continue
            status = getattr(response, "status_code", 0)
            if 500 <= status < 600:
                last_error = f"server error {status}"
                log.warning("remote backend attempt %d failed: %s", attempt, last_error)
                continue
            if status != 200:
                body = getattr(response, "text", "")[:200]
                raise BackendError(f"endpoint returned {status}: {body}")
            try:
                data = response.json()
                text = data["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise BackendError(f"malformed completion response: {exc}") from exc
            if not isinstance(text, str):
                raise BackendError("completion content is not text")
            return text
        raise BackendError(f"remote backend gave up after {attempts} attempts: {last_error}")


def complete(backend: ModelBackend, request: ChatRequest) -> str:
    return backend.complete(request)


def script_from_transcript(rows: Sequence[tuple[ChatRequest, str]]) -> Script:
    """Turn a captured transcript back into an index-matched script."""
    if not rows:
        raise ConfigError("cannot build a script from an empty transcript")
    return Script.from_pairs([(i, reply) for i, (_, reply) in enumerate(rows)])


def transcript_to_jsonable(rows: Sequence[tuple[ChatRequest, str]]) -> list[dict]:
    out = []
    for request, reply in rows:
        out.append(
            {
                "session": request.session,
                "system": request.system,
                "user": request.user,
                "reply": reply,
            }
        )
    return out
