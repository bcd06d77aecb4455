"""Core domain types: cases, reports, routing decisions, verdicts."""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .errors import InvalidCase


class Role(str, Enum):
    TIER1_EXPERT_1 = "tier1_expert_1"
    TIER1_EXPERT_2 = "tier1_expert_2"
    TIER2_SUPERVISOR = "tier2_supervisor"
    CRITIC_1 = "critic_1"
    CRITIC_2 = "critic_2"
    LEADER = "leader"


class Stage(str, Enum):
    AFTER_TIER1 = "after_tier1"
    AFTER_TIER2 = "after_tier2"


class Destination(str, Enum):
    TIER2 = "tier2"
    TIER3 = "tier3"
    TERMINATE = "terminate"


class Route(str, Enum):
    T1_T2 = "T1_T2"
    T1_T3 = "T1_T3"
    T1_T2_T3 = "T1_T2_T3"


@dataclass(frozen=True)
class ImagePayload:
    data: bytes
    media_type: str = "image/png"


@dataclass(frozen=True)
class MedicalCase:
    """One VQA instance: optional image, question, lettered options, optional gold."""

    case_id: str
    question: str
    options: tuple[tuple[str, str], ...]  # (letter, text) pairs
    image: Optional[ImagePayload] = None
    gold_answer: Optional[str] = None
    field_hint: Optional[str] = None

    @property
    def letters(self) -> tuple[str, ...]:
        return tuple(letter for letter, _ in self.options)

    def validate(self) -> None:
        n = len(self.options)
        if not (2 <= n <= 26):
            raise InvalidCase(f"{self.case_id}: needs 2-26 options, got {n}")
        expected = tuple(string.ascii_uppercase[:n])
        if self.letters != expected:
            raise InvalidCase(
                f"{self.case_id}: option letters must be the contiguous prefix "
                f"{''.join(expected)}, got {''.join(self.letters)}"
            )
        if self.gold_answer is not None and self.gold_answer not in self.letters:
            raise InvalidCase(
                f"{self.case_id}: gold answer {self.gold_answer!r} not among options"
            )

    @classmethod
    def from_texts(
        cls,
        case_id: str,
        question: str,
        option_texts: list[str],
        **kwargs,
    ) -> "MedicalCase":
        options = tuple(
            (string.ascii_uppercase[i], text) for i, text in enumerate(option_texts)
        )
        case = cls(case_id=case_id, question=question, options=options, **kwargs)
        case.validate()
        return case


@dataclass(frozen=True)
class AgentReport:
    role: Role
    hypothesis: str
    reasoning: str
    temperature: float
    raw_text: str


@dataclass(frozen=True)
class RiskReport:
    critic_index: int  # 1 | 2
    target_hypothesis: str
    flaws: str
    counter_evidence: str
    raw_text: str


@dataclass(frozen=True)
class Inquiry:
    addressed_to: int  # critic index 1 | 2
    reviewed_option: str
    question: str


@dataclass(frozen=True)
class InquiryResponse:
    critic_index: int
    response: str


@dataclass(frozen=True)
class RouteDecision:
    stage: Stage
    destination: Destination
    divergence: bool
    candidates: Optional[tuple[str, str]] = None

    def to_dict(self) -> dict:
        return {
            "stage": self.stage.value,
            "destination": self.destination.value,
            "divergence": self.divergence,
            "candidates": list(self.candidates) if self.candidates else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RouteDecision":
        cands = d.get("candidates")
        return cls(
            stage=Stage(d["stage"]),
            destination=Destination(d["destination"]),
            divergence=d["divergence"],
            candidates=tuple(cands) if cands else None,
        )


@dataclass(frozen=True)
class Verdict:
    answer: str
    final_reasoning: str
    route_taken: Route
    chose_outside_candidates: bool = False

    def to_dict(self) -> dict:
        return {
            "answer": self.answer,
            "final_reasoning": self.final_reasoning,
            "route_taken": self.route_taken.value,
            "chose_outside_candidates": self.chose_outside_candidates,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Verdict":
        return cls(
            answer=d["answer"],
            final_reasoning=d["final_reasoning"],
            route_taken=Route(d["route_taken"]),
            chose_outside_candidates=d["chose_outside_candidates"],
        )
