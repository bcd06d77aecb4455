"""Chat-completion backends: live HTTP, scripted, and record/replay.

All backends expose a single method, ``complete(request) -> ChatResponse``.
The wire shape for the live client is the OpenAI-compatible chat-completions
API (messages array, per-request temperature, images as base64 data URLs),
which both hosted APIs and Ollama-style local servers speak.
"""

from __future__ import annotations

import base64
import json
import math
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol, Sequence, Union

import httpx

from .errors import (
    BackendUnavailable,
    ContractViolation,
    ReplayDivergence,
    ScriptMismatch,
)

RECORDING_SCHEMA_VERSION = 1


# ---- request / response -----------------------------------------------------

@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    data: bytes
    media_type: str = "image/png"


ContentPart = Union[TextPart, ImagePart]


@dataclass(frozen=True)
class ChatMessage:
    role: str  # system | user | assistant
    content: Union[str, tuple[ContentPart, ...]]

    def text(self) -> str:
        if isinstance(self.content, str):
            return self.content
        return "\n".join(p.text for p in self.content if isinstance(p, TextPart))


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[ChatMessage, ...]
    temperature: float
    model_id: str
    max_output_tokens: Optional[int] = None

    def validate(self) -> None:
        if not self.messages:
            raise ContractViolation("request needs at least one message")
        for m in self.messages:
            if isinstance(m.content, tuple) and m.role != "user":
                if any(isinstance(p, ImagePart) for p in m.content):
                    raise ContractViolation("image parts only allowed in user messages")


@dataclass(frozen=True)
class Usage:
    input_tokens: int
    output_tokens: int
    estimated: bool = False


@dataclass(frozen=True)
class ChatResponse:
    text: str
    usage: Usage
    latency_s: float = 0.0


def estimate_tokens(text: str) -> int:
    """Deterministic fallback when a server omits usage: ceil(chars / 4)."""
    return math.ceil(len(text) / 4)


def request_digest(request: ChatRequest) -> dict:
    """Canonical request digest: full prompt text, image byte-lengths only."""
    messages = []
    for m in request.messages:
        if isinstance(m.content, str):
            content: list[dict] = [{"type": "text", "text": m.content}]
        else:
            content = []
            for p in m.content:
                if isinstance(p, TextPart):
                    content.append({"type": "text", "text": p.text})
                else:
                    content.append(
                        {"type": "image", "bytes": len(p.data), "media_type": p.media_type}
                    )
        messages.append({"role": m.role, "content": content})
    return {
        "messages": messages,
        "temperature": request.temperature,
        "model_id": request.model_id,
        "max_output_tokens": request.max_output_tokens,
    }


def digest_text(digest: dict) -> str:
    """All prompt text in a digest, concatenated; used for substring matching."""
    chunks = []
    for m in digest["messages"]:
        for part in m["content"]:
            if part["type"] == "text":
                chunks.append(part["text"])
    return "\n".join(chunks)


class ChatBackend(Protocol):
    def complete(self, request: ChatRequest) -> ChatResponse: ...


# ---- scripted backend -------------------------------------------------------

@dataclass
class ScriptEntry:
    """One canned response.

    ``match=None`` entries are consumed in request order; entries with a
    substring pattern are reusable rules checked first (first match wins).
    """

    response_text: str
    match: Optional[str] = None
    input_tokens: int = 100
    output_tokens: int = 20

    @classmethod
    def in_order(cls, response_text: str, **kw) -> "ScriptEntry":
        return cls(response_text=response_text, match=None, **kw)

    @classmethod
    def when_prompt_contains(cls, pattern: str, response_text: str, **kw) -> "ScriptEntry":
        return cls(response_text=response_text, match=pattern, **kw)


class ScriptedBackend:
    """Pure, deterministic backend driven by a script.

    Matching is serialized internally so concurrent callers still observe
    deterministic sequence semantics.
    """

    def __init__(self, entries: Sequence[ScriptEntry]):
        self._rules = [e for e in entries if e.match is not None]
        self._sequence = [e for e in entries if e.match is None]
        self._cursor = 0
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> ChatResponse:
        request.validate()
        prompt = digest_text(request_digest(request))
        with self._lock:
            entry = None
            for rule in self._rules:
                if rule.match in prompt:
                    entry = rule
                    break
            if entry is None:
                if self._cursor >= len(self._sequence):
                    raise ScriptMismatch(
                        f"no script entry for request (sequence exhausted at {self._cursor})"
                    )
                entry = self._sequence[self._cursor]
                self._cursor += 1
        return ChatResponse(
            text=entry.response_text,
            usage=Usage(entry.input_tokens, entry.output_tokens, estimated=False),
            latency_s=0.0,
        )


class CallableBackend:
    """Adapter turning ``fn(request) -> str | ChatResponse`` into a backend."""

    def __init__(self, fn):
        self._fn = fn
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> ChatResponse:
        request.validate()
        with self._lock:
            out = self._fn(request)
        if isinstance(out, ChatResponse):
            return out
        return ChatResponse(text=out, usage=Usage(100, 20), latency_s=0.0)


# ---- live HTTP backend ------------------------------------------------------

@dataclass
class HTTPBackendConfig:
    base_url: str
    model_id: str = ""
    api_key_env: str = "UCA_API_KEY"
    timeout_s: float = 120.0
    max_retries: int = 2
    backoff_base_s: float = 1.0
    max_in_flight: int = 8


class HTTPBackend:
    """OpenAI-compatible chat-completions client with retry and backoff."""

    def __init__(self, config: HTTPBackendConfig, client: Optional[httpx.Client] = None):
        self.config = config
        self._client = client or httpx.Client(timeout=config.timeout_s)
        self._semaphore = threading.Semaphore(config.max_in_flight)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    @staticmethod
    def _wire_content(message: ChatMessage):
        if isinstance(message.content, str):
            return message.content
        parts = []
        for p in message.content:
            if isinstance(p, TextPart):
                parts.append({"type": "text", "text": p.text})
            else:
                b64 = base64.b64encode(p.data).decode("ascii")
                parts.append(
                    {
                        "type": "image_url",
                        "image_url": {"url": f"data:{p.media_type};base64,{b64}"},
                    }
                )
        return parts

    def _payload(self, request: ChatRequest) -> dict:
        payload = {
            "model": request.model_id or self.config.model_id,
            "temperature": request.temperature,
            "messages": [
                {"role": m.role, "content": self._wire_content(m)} for m in request.messages
            ],
        }
        if request.max_output_tokens is not None:
            payload["max_tokens"] = request.max_output_tokens
        return payload

    def complete(self, request: ChatRequest) -> ChatResponse:
        request.validate()
        payload = self._payload(request)
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        last_error: Optional[Exception] = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                time.sleep(self.config.backoff_base_s * 2 ** (attempt - 1))
            start = time.monotonic()
            try:
                with self._semaphore:
                    resp = self._client.post(url, json=payload, headers=self._headers())
            except httpx.HTTPError as exc:  # timeouts count against the budget
                last_error = exc
                continue
            latency = time.monotonic() - start
            if resp.status_code >= 500 or resp.status_code == 429:
                last_error = ContractViolation(f"HTTP {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise ContractViolation(f"HTTP {resp.status_code}: {resp.text[:200]}")
            return self._parse_response(resp, request, latency)
        raise BackendUnavailable(f"retry budget exhausted: {last_error}")

    @staticmethod
    def _parse_response(resp: httpx.Response, request: ChatRequest, latency: float) -> ChatResponse:
        try:
            body = resp.json()
            text = body["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ContractViolation(f"malformed wire response: {exc}") from exc
        usage_obj = body.get("usage") or {}
        in_tok = usage_obj.get("prompt_tokens")
        out_tok = usage_obj.get("completion_tokens")
        if isinstance(in_tok, int) and isinstance(out_tok, int):
            usage = Usage(in_tok, out_tok, estimated=False)
        else:
            prompt_chars = "".join(m.text() for m in request.messages)
            usage = Usage(estimate_tokens(prompt_chars), estimate_tokens(text), estimated=True)
        return ChatResponse(text=text, usage=usage, latency_s=latency)


# ---- record / replay --------------------------------------------------------

@dataclass
class Recording:
    """Ordered (request digest, response, usage) triples for one session."""

    entries: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    schema_version: int = RECORDING_SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "meta": self.meta,
            "entries": self.entries,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Recording":
        return cls(
            entries=list(doc["entries"]),
            meta=doc.get("meta") or {},
            schema_version=doc.get("schema_version", RECORDING_SCHEMA_VERSION),
        )

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, indent=2),
            encoding="utf-8",
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Recording":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


class RecordingBackend:
    """Wraps any backend and captures every exchange in order."""

    def __init__(self, inner: ChatBackend, meta: Optional[dict] = None):
        self._inner = inner
        self.recording = Recording(meta=meta or {})
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> ChatResponse:
        response = self._inner.complete(request)
        with self._lock:
            self.recording.entries.append(
                {
                    "request_digest": request_digest(request),
                    "response_text": response.text,
                    "input_tokens": response.usage.input_tokens,
                    "output_tokens": response.usage.output_tokens,
                    "usage_estimated": response.usage.estimated,
                }
            )
        return response


class ReplayBackend:
    """Replays a recording by sequence position, asserting digest equality."""

    def __init__(self, recording: Recording):
        self._recording = recording
        self._cursor = 0
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> ChatResponse:
        request.validate()
        digest = request_digest(request)
        with self._lock:
            position = self._cursor
            if position >= len(self._recording.entries):
                raise ReplayDivergence(position, "recording exhausted")
            entry = self._recording.entries[position]
            if entry["request_digest"] != digest:
                raise ReplayDivergence(position, "prompt digest mismatch")
            self._cursor += 1
        return ChatResponse(
            text=entry["response_text"],
            usage=Usage(
                entry["input_tokens"], entry["output_tokens"], entry["usage_estimated"]
            ),
            latency_s=0.0,
        )


def record_session(inner: ChatBackend, meta: Optional[dict] = None) -> RecordingBackend:
    return RecordingBackend(inner, meta=meta)


def replay_session(recording: Recording) -> ReplayBackend:
    return ReplayBackend(recording)
