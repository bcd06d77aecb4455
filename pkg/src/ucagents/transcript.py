"""Ordered, serializable event log of one case's deliberation."""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

from .types import RouteDecision, Role, Verdict

SCHEMA_VERSION = 1


@dataclass
class ModelCallEvent:
    role: Role
    request_digest: dict
    response_text: str
    input_tokens: int
    output_tokens: int
    usage_estimated: bool
    temperature: float
    wall_time_s: float
    retry_index: int = 0  # 0 = first attempt, >0 = parse retry
    seq: int = -1

    def to_dict(self) -> dict:
        return {
            "event": "model_call",
            "seq": self.seq,
            "role": self.role.value,
            "request_digest": self.request_digest,
            "response_text": self.response_text,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "usage_estimated": self.usage_estimated,
            "temperature": self.temperature,
            "wall_time_s": self.wall_time_s,
            "retry_index": self.retry_index,
        }


@dataclass
class ParseOutcomeEvent:
    role: Role
    success: bool
    fields: dict
    error: Optional[str] = None
    seq: int = -1

    def to_dict(self) -> dict:
        return {
            "event": "parse_outcome",
            "seq": self.seq,
            "role": self.role.value,
            "success": self.success,
            "fields": self.fields,
            "error": self.error,
        }


@dataclass
class RoutingEvent:
    decision: RouteDecision
    seq: int = -1

    def to_dict(self) -> dict:
        return {"event": "routing", "seq": self.seq, "decision": self.decision.to_dict()}


@dataclass
class VerdictEvent:
    verdict: Verdict
    seq: int = -1

    def to_dict(self) -> dict:
        return {"event": "verdict", "seq": self.seq, "verdict": self.verdict.to_dict()}


Event = Union[ModelCallEvent, ParseOutcomeEvent, RoutingEvent, VerdictEvent]


class Transcript:
    """Strictly ordered event log for one case.

    Events get a monotonically increasing sequence number on append. Exactly
    one VerdictEvent may be appended, and nothing after it.
    """

    def __init__(self, case_id: str, case_meta: Optional[dict] = None):
        self.case_id = case_id
        self.schema_version = SCHEMA_VERSION
        self.case_meta: dict = case_meta or {}
        self.events: list[Event] = []
        self._lock = threading.Lock()
        self._closed = False

    def add(self, event: Event) -> Event:
        with self._lock:
            if self._closed:
                raise ValueError("transcript already has a verdict")
            event.seq = len(self.events)
            self.events.append(event)
            if isinstance(event, VerdictEvent):
                self._closed = True
        return event

    def extend(self, events: list[Event]) -> None:
        for e in events:
            self.add(e)

    # ---- queries ----

    def model_calls(self) -> list[ModelCallEvent]:
        return [e for e in self.events if isinstance(e, ModelCallEvent)]

    def primary_calls(self) -> list[ModelCallEvent]:
        """Model calls excluding parse-retry repeats."""
        return [e for e in self.model_calls() if e.retry_index == 0]

    def verdict(self) -> Optional[Verdict]:
        for e in self.events:
            if isinstance(e, VerdictEvent):
                return e.verdict
        return None

    def routing_decisions(self) -> list[RouteDecision]:
        return [e.decision for e in self.events if isinstance(e, RoutingEvent)]

    # ---- serialization ----

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "case_id": self.case_id,
            "case_meta": self.case_meta,
            "events": [e.to_dict() for e in self.events],
        }

    def canonical_dict(self) -> dict:
        """Serialization with wall-time fields zeroed, for determinism checks."""
        doc = self.to_dict()
        for e in doc["events"]:
            if e["event"] == "model_call":
                e["wall_time_s"] = 0.0
        return doc

    def to_json(self, canonical: bool = False) -> str:
        doc = self.canonical_dict() if canonical else self.to_dict()
        return json.dumps(doc, sort_keys=True, ensure_ascii=False, indent=2)

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def from_dict(cls, doc: dict) -> "Transcript":
        t = cls(doc["case_id"], case_meta=doc.get("case_meta") or {})
        t.schema_version = doc["schema_version"]
        for e in doc["events"]:
            kind = e["event"]
            if kind == "model_call":
                ev: Event = ModelCallEvent(
                    role=Role(e["role"]),
                    request_digest=e["request_digest"],
                    response_text=e["response_text"],
                    input_tokens=e["input_tokens"],
                    output_tokens=e["output_tokens"],
                    usage_estimated=e["usage_estimated"],
                    temperature=e["temperature"],
                    wall_time_s=e["wall_time_s"],
                    retry_index=e["retry_index"],
                )
            elif kind == "parse_outcome":
                ev = ParseOutcomeEvent(
                    role=Role(e["role"]),
                    success=e["success"],
                    fields=e["fields"],
                    error=e.get("error"),
                )
            elif kind == "routing":
                ev = RoutingEvent(decision=RouteDecision.from_dict(e["decision"]))
            elif kind == "verdict":
                ev = VerdictEvent(verdict=Verdict.from_dict(e["verdict"]))
            else:
                raise ValueError(f"unknown event kind {kind!r}")
            t.add(ev)
        return t

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Transcript":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
