"""Chat model transports: an OpenAI-compatible HTTP client and a scripted stand-in."""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol, Sequence

import requests

logger = logging.getLogger(__name__)


class TransportError(RuntimeError):
    """The chat endpoint could not be reached or answered unusably."""


@dataclass
class ToolCall:
    id: str
    name: str
    arguments: dict[str, Any]
    # set when the model sent arguments that are not a JSON object
    parse_error: str | None = None


@dataclass
class ModelReply:
    text: str | None = None
    calls: list[ToolCall] = field(default_factory=list)


class ChatModel(Protocol):
    model_id: str

    def complete(self, messages: Sequence[Mapping], tools: Sequence[Mapping]) -> ModelReply:
        ...


def _parse_arguments(raw) -> tuple[dict, str | None]:
    if isinstance(raw, dict):
        return raw, None
    try:
        value = json.loads(raw or "{}")
    except ValueError as e:
        return {}, f"arguments are not valid JSON: {e}"
    if not isinstance(value, dict):
        return {}, "arguments must be a JSON object"
    return value, None


class OpenAIChatModel:
    """Chat-completions endpoint with tool calling; retries with exponential backoff."""

    def __init__(
        self,
        model_id: str,
        url: str | None = None,
        api_key: str | None = None,
        retries: int = 3,
        backoff: float = 1.0,
        timeout: float = 300.0,
        temperature: float | None = None,
    ):
        self.model_id = model_id
        self.url = (url or os.environ.get("KGSPARQL_CHAT_URL") or "https://api.openai.com/v1").rstrip("/")
        self.api_key = api_key or os.environ.get("KGSPARQL_API_KEY") or os.environ.get("OPENAI_API_KEY")
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout
        self.temperature = temperature
        self._session = requests.Session()

    def complete(self, messages: Sequence[Mapping], tools: Sequence[Mapping]) -> ModelReply:
        payload: dict[str, Any] = {"model": self.model_id, "messages": list(messages)}
        if tools:
            payload["tools"] = list(tools)
            payload["tool_choice"] = "auto"
        if self.temperature is not None:
            payload["temperature"] = self.temperature
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        url = self.url if self.url.endswith("/chat/completions") else self.url + "/chat/completions"
        message = None
        last: Exception | None = None
        for attempt in range(self.retries):
            try:
                resp = self._session.post(url, json=payload, headers=headers, timeout=self.timeout)
            except requests.RequestException as e:
                last = e
            else:
                if resp.status_code == 429 or resp.status_code >= 500:
                    last = TransportError(f"HTTP {resp.status_code}: {resp.text[:500]}")
                elif resp.status_code >= 400:
                    # client errors will not improve on retry
                    raise TransportError(f"HTTP {resp.status_code}: {resp.text[:500]}")
                else:
                    try:
                        message = resp.json()["choices"][0]["message"]
                        break
                    except (KeyError, IndexError, TypeError, ValueError) as e:
                        last = TransportError(f"malformed chat response: {e}")
            if attempt < self.retries - 1:
                time.sleep(self.backoff * 2**attempt)
        if message is None:
            raise TransportError(f"chat endpoint failed after {self.retries} attempts: {last}")
        calls = []
        for i, tc in enumerate(message.get("tool_calls") or []):
            fn = tc.get("function", {})
            args, err = _parse_arguments(fn.get("arguments"))
            calls.append(ToolCall(tc.get("id") or f"call_{i}", fn.get("name", ""), args, err))
        return ModelReply(message.get("content") or None, calls)


Step = Mapping[str, Any] | Callable[[Sequence[Mapping], Sequence[Mapping]], ModelReply]


def reply_from_step(step: Mapping[str, Any], counter: int) -> ModelReply:
    calls = [
        ToolCall(c.get("id") or f"call_{counter}_{i}", c["name"], dict(c.get("args", {})))
        for i, c in enumerate(step.get("calls", []))
    ]
    return ModelReply(step.get("text"), calls)


class ScriptedChatModel:
    """Replays a fixed list of replies.

    Each step is ``{"text": ..., "calls": [{"name": ..., "args": {...}}]}`` or a
    callable ``(messages, tools) -> ModelReply``. With ``repeat_last`` the final
    step is replayed forever; otherwise running out raises TransportError.
    Every request is recorded in ``received`` for inspection.
    """

    def __init__(self, steps: Sequence[Step], model_id: str = "scripted", repeat_last: bool = False):
        self.steps = list(steps)
        self.model_id = model_id
        self.repeat_last = repeat_last
        self.received: list[tuple[list[Mapping], list[Mapping]]] = []
        self._pos = 0

    def complete(self, messages: Sequence[Mapping], tools: Sequence[Mapping]) -> ModelReply:
        self.received.append((json.loads(json.dumps(list(messages))), list(tools)))
        if self._pos >= len(self.steps):
            if not (self.repeat_last and self.steps):
                raise TransportError("scripted model has no more replies")
            step = self.steps[-1]
        else:
            step = self.steps[self._pos]
        self._pos += 1
        if callable(step):
            return step(messages, tools)
        return reply_from_step(step, self._pos)


@dataclass
class ScriptBook:
    """Scripts for many sessions, keyed by sample id or question.

    File layout (JSON)::

        {"sessions": {"<id or question>": {"steps": [...], "feedback": [...],
                                           "repeat_last": false}},
         "default": {...}}
    """

    sessions: dict[str, dict]
    default: dict | None = None

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ScriptBook":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if "sessions" not in data and "steps" in data:
            return cls({}, data)
        return cls(dict(data.get("sessions", {})), data.get("default"))

    def script_for(self, *keys: str) -> dict:
        for k in keys:
            if k in self.sessions:
                return self.sessions[k]
        if self.default is None:
            raise TransportError(f"no script for session {keys[0]!r}")
        return self.default

    def models(self, *keys: str) -> tuple[ScriptedChatModel, ScriptedChatModel]:
        """Fresh (session model, feedback model) pair for one session."""
        script = self.script_for(*keys)
        main = ScriptedChatModel(script.get("steps", []), repeat_last=script.get("repeat_last", False))
        feedback = ScriptedChatModel(script.get("feedback", []), repeat_last=True)
        return main, feedback
