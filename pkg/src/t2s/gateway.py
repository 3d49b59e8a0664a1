"""Chat-completion client with prompt templating and record/replay.

Every model-dependent pipeline stage goes through :class:`ChatClient`, whose
transport is either live HTTP, a recorded cassette replay, or a scripted stub
for tests.  Requests are keyed by a hash of their canonical encoding so a
cassette replays deterministically; repeated identical requests replay in
recorded order.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .model import canonical_json

ENV_BASE_URL = "T2S_LLM_BASE_URL"
ENV_API_KEY = "T2S_LLM_API_KEY"

_ROLES = ("system", "user", "assistant")
_PLACEHOLDER = re.compile(r"\{([a-zA-Z_][a-zA-Z0-9_]*)\}")


class TransportError(Exception):
    """The transport could not produce a response (after retries, if any)."""


class CassetteMiss(Exception):
    """Replay was asked for a request the cassette never recorded."""

    def __init__(self, key: str):
        self.key = key
        super().__init__(f"no recorded response for request key {key}")


class UnknownTemplate(Exception):
    pass


class MissingVariable(Exception):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"template placeholder {{{name}}} is not bound")


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in _ROLES:
            raise ValueError(f"invalid role: {self.role!r}")


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0
    max_tokens: int = 1024

    def __post_init__(self):
        if not self.messages:
            raise ValueError("a request needs at least one message")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    @classmethod
    def user(cls, model: str, content: str, temperature: float = 0.0,
             max_tokens: int = 1024) -> ChatRequest:
        return cls(model, (ChatMessage("user", content),), temperature, max_tokens)

    def to_json_obj(self) -> dict:
        return {
            "model": self.model,
            "messages": [{"role": m.role, "content": m.content} for m in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> ChatRequest:
        return cls(
            model=str(obj["model"]),
            messages=tuple(
                ChatMessage(m["role"], m["content"]) for m in obj["messages"]
            ),
            temperature=float(obj.get("temperature", 0.0)),
            max_tokens=int(obj.get("max_tokens", 1024)),
        )


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int = 0
    completion_tokens: int = 0


@dataclass(frozen=True)
class ChatResponse:
    content: str
    finish_reason: str = "stop"
    usage: Usage = Usage()

    def __post_init__(self):
        if self.finish_reason != "error" and self.content is None:
            raise ValueError("content must be present unless finish_reason is 'error'")

    def to_json_obj(self) -> dict:
        return {
            "content": self.content,
            "finish_reason": self.finish_reason,
            "usage": {
                "prompt_tokens": self.usage.prompt_tokens,
                "completion_tokens": self.usage.completion_tokens,
            },
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> ChatResponse:
        usage = obj.get("usage") or {}
        return cls(
            content=str(obj["content"]),
            finish_reason=str(obj.get("finish_reason", "stop")),
            usage=Usage(
                int(usage.get("prompt_tokens", 0)),
                int(usage.get("completion_tokens", 0)),
            ),
        )


def request_key(request: ChatRequest) -> str:
    """Stable cassette key: hash of the canonical, key-sorted encoding of
    (model, messages, temperature).  max_tokens is deliberately excluded so
    token-limit tuning does not invalidate recorded cassettes."""
    payload = {
        "model": request.model,
        "messages": [{"role": m.role, "content": m.content} for m in request.messages],
        "temperature": request.temperature,
    }
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


@dataclass
class Cassette:
    """Ordered record of request/response pairs for deterministic replay."""

    entries: list[tuple[str, ChatRequest, ChatResponse]] = field(default_factory=list)

    def append(self, request: ChatRequest, response: ChatResponse) -> None:
        self.entries.append((request_key(request), request, response))

    def to_json_obj(self) -> list:
        return [
            {"key": key, "request": req.to_json_obj(), "response": resp.to_json_obj()}
            for key, req, resp in self.entries
        ]

    @classmethod
    def from_json_obj(cls, obj: list) -> Cassette:
        entries = []
        for item in obj:
            req = ChatRequest.from_json_obj(item["request"])
            resp = ChatResponse.from_json_obj(item["response"])
            entries.append((str(item.get("key") or request_key(req)), req, resp))
        return cls(entries)

    def save(self, path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json_obj(), indent=2, sort_keys=True, ensure_ascii=False)
            + "\n"
        )

    @classmethod
    def load(cls, path) -> Cassette:
        return cls.from_json_obj(json.loads(Path(path).read_text()))


def render_prompt(template_name: str, variables: dict[str, str]) -> str:
    """Fill a named template; every ``{placeholder}`` must be bound."""
    try:
        text = (resources.files("t2s.templates") / f"{template_name}.txt").read_text()
    except (FileNotFoundError, ModuleNotFoundError):
        raise UnknownTemplate(template_name) from None

    def substitute(match: re.Match) -> str:
        name = match.group(1)
        if name not in variables:
            raise MissingVariable(name)
        return str(variables[name])

    return _PLACEHOLDER.sub(substitute, text)


def list_templates() -> list[str]:
    files = resources.files("t2s.templates")
    return sorted(
        p.name[: -len(".txt")] for p in files.iterdir() if p.name.endswith(".txt")
    )


class LiveTransport:
    """HTTP JSON chat-completion endpoint with bounded retry.

    Base URL and API key come from T2S_LLM_BASE_URL / T2S_LLM_API_KEY unless
    passed explicitly; a session object can be injected for testing.
    """

    deterministic = False

    def __init__(self, base_url: str | None = None, api_key: str | None = None,
                 session=None, max_attempts: int = 3, backoff: float = 0.5):
        self.base_url = (base_url or os.environ.get(ENV_BASE_URL, "")).rstrip("/")
        self.api_key = api_key or os.environ.get(ENV_API_KEY, "")
        if not self.base_url:
            raise TransportError(f"no endpoint configured; set {ENV_BASE_URL}")
        if session is None:
            import requests

            session = requests.Session()
        self.session = session
        self.max_attempts = max_attempts
        self.backoff = backoff

    def send(self, request: ChatRequest) -> ChatResponse:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error = None
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff * (2 ** (attempt - 1)))
            try:
                resp = self.session.post(
                    f"{self.base_url}/chat/completions",
                    json=request.to_json_obj(),
                    headers=headers,
                    timeout=120,
                )
            except Exception as exc:  # connection-level failure is transient
                last_error = str(exc)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = f"HTTP {resp.status_code}"
                continue
            if resp.status_code != 200:
                raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            data = resp.json()
            choice = data["choices"][0]
            usage = data.get("usage") or {}
            return ChatResponse(
                content=choice["message"]["content"],
                finish_reason=str(choice.get("finish_reason", "stop")),
                usage=Usage(
                    int(usage.get("prompt_tokens", 0)),
                    int(usage.get("completion_tokens", 0)),
                ),
            )
        raise TransportError(f"gave up after {self.max_attempts} attempts: {last_error}")


class ReplayTransport:
    """Serves recorded responses; identical requests replay in recorded order."""

    deterministic = True

    def __init__(self, cassette: Cassette):
        self._queues: dict[str, deque[ChatResponse]] = {}
        for key, _req, resp in cassette.entries:
            self._queues.setdefault(key, deque()).append(resp)
        self._lock = threading.Lock()

    def send(self, request: ChatRequest) -> ChatResponse:
        key = request_key(request)
        with self._lock:
            queue = self._queues.get(key)
            if not queue:
                raise CassetteMiss(key)
            return queue.popleft()


class ScriptedTransport:
    """Programmed responses for tests: a fixed sequence, or a callable on the
    request."""

    deterministic = True

    def __init__(self, script):
        self._fn = script if callable(script) else None
        self._queue = None if callable(script) else deque(script)
        self._lock = threading.Lock()

    def send(self, request: ChatRequest) -> ChatResponse:
        if self._fn is not None:
            out = self._fn(request)
        else:
            with self._lock:
                if not self._queue:
                    raise TransportError("scripted transport exhausted")
                out = self._queue.popleft()
        return out if isinstance(out, ChatResponse) else ChatResponse(content=str(out))


class RecordingTransport:
    """Wraps another transport and appends every exchange to a cassette."""

    def __init__(self, inner, cassette: Cassette | None = None, path=None):
        self.inner = inner
        self.cassette = cassette if cassette is not None else Cassette()
        self.path = path
        self._lock = threading.Lock()

    @property
    def deterministic(self) -> bool:
        return getattr(self.inner, "deterministic", False)

    def send(self, request: ChatRequest) -> ChatResponse:
        response = self.inner.send(request)
        with self._lock:  # cassette appends are serialized
            self.cassette.append(request, response)
            if self.path is not None:
                self.cassette.save(self.path)
        return response


class ChatClient:
    """Uniform completion client enforcing an in-flight concurrency bound and
    an optional requests-per-minute limit."""

    def __init__(self, transport, max_in_flight: int = 4,
                 requests_per_minute: int | None = None):
        self.transport = transport
        self._sem = threading.Semaphore(max_in_flight)
        self._rpm = requests_per_minute
        self._sent: deque[float] = deque()
        self._rate_lock = threading.Lock()

    @property
    def deterministic(self) -> bool:
        return getattr(self.transport, "deterministic", False)

    def _throttle(self) -> None:
        if not self._rpm:
            return
        while True:
            with self._rate_lock:
                now = time.monotonic()
                while self._sent and now - self._sent[0] > 60.0:
                    self._sent.popleft()
                if len(self._sent) < self._rpm:
                    self._sent.append(now)
                    return
                wait = 60.0 - (now - self._sent[0])
            time.sleep(max(wait, 0.01))

    def complete(self, request: ChatRequest) -> ChatResponse:
        self._throttle()
        with self._sem:
            return self.transport.send(request)
