"""Protocol-level quality and cost metrics.

Trajectory entropy over proposed hypotheses, exact integer token ledgers
with price-table costing, per-route accuracy tables, and judge-assisted
noise/evidence measurements.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .backend import ChatBackend, ChatMessage, ChatRequest
from .errors import (
    BackendUnavailable,
    EmptyTrajectory,
    JudgeOutputUnparsable,
    JudgeUnavailable,
    MissingGold,
)
from .transcript import ModelCallEvent, ParseOutcomeEvent, Transcript
from .types import Role, Route


# ---- trajectory entropy --------------------------------------------------

@dataclass(frozen=True)
class TrajectoryMetrics:
    hypotheses: tuple[str, ...]
    entropy_bits: float
    distinct_count: int


def trajectory_entropy(hypotheses: Iterable[str]) -> TrajectoryMetrics:
    """Shannon entropy (bits) of the hypothesis multiset, p = frequency/total."""
    items = tuple(hypotheses)
    if not items:
        raise EmptyTrajectory("no hypotheses proposed")
    counts = Counter(items)
    total = len(items)
    entropy = -sum((c / total) * math.log2(c / total) for c in counts.values())
    # -0.0 from a single outcome normalizes to 0.0
    return TrajectoryMetrics(hypotheses=items, entropy_bits=entropy + 0.0, distinct_count=len(counts))


_PROPOSING_ROLES = {Role.TIER1_EXPERT_1, Role.TIER1_EXPERT_2, Role.TIER2_SUPERVISOR}


def hypotheses_from_transcript(transcript: Transcript) -> list[str]:
    """Hypothesis letters asserted during one case.

    Counts the Tier-1 pair, the Tier-2 supervisor, and the leader verdict;
    critics audit rather than propose, so their targets are excluded.
    """
    letters: list[str] = []
    for event in transcript.events:
        if isinstance(event, ParseOutcomeEvent) and event.success:
            if event.role in _PROPOSING_ROLES and "answer" in event.fields:
                letters.append(event.fields["answer"])
            elif event.role is Role.LEADER and "final_answer" in event.fields:
                letters.append(event.fields["final_answer"])
    return letters


# ---- usage ledger ----------------------------------------------------------

@dataclass(frozen=True)
class PriceTable:
    """USD per 1K tokens."""
    input_per_1k: float = 0.0
    output_per_1k: float = 0.0


@dataclass(frozen=True)
class LedgerRow:
    role: str
    input_tokens: int
    output_tokens: int
    estimated: bool


@dataclass
class UsageLedger:
    rows: list[LedgerRow] = field(default_factory=list)
    prices: Optional[PriceTable] = None

    @classmethod
    def from_transcript(cls, transcript: Transcript, prices: Optional[PriceTable] = None) -> "UsageLedger":
        rows = [
            LedgerRow(
                role=e.role.value,
                input_tokens=e.input_tokens,
                output_tokens=e.output_tokens,
                estimated=e.usage_estimated,
            )
            for e in transcript.model_calls()
        ]
        return cls(rows=rows, prices=prices)

    @property
    def api_calls(self) -> int:
        return len(self.rows)

    @property
    def total_input_tokens(self) -> int:
        return sum(r.input_tokens for r in self.rows)

    @property
    def total_output_tokens(self) -> int:
        return sum(r.output_tokens for r in self.rows)

    @property
    def any_estimated(self) -> bool:
        return any(r.estimated for r in self.rows)

    def cost(self, prices: Optional[PriceTable] = None) -> float:
        p = prices or self.prices or PriceTable()
        return (
            self.total_input_tokens * p.input_per_1k
            + self.total_output_tokens * p.output_per_1k
        ) / 1000.0

    def merged(self, other: "UsageLedger") -> "UsageLedger":
        return UsageLedger(rows=self.rows + other.rows, prices=self.prices or other.prices)

    def to_dict(self) -> dict:
        return {
            "api_calls": self.api_calls,
            "total_input_tokens": self.total_input_tokens,
            "total_output_tokens": self.total_output_tokens,
            "any_estimated": self.any_estimated,
            "cost": self.cost(),
        }


def ledger_from_transcript(transcript: Transcript, prices: Optional[PriceTable] = None) -> UsageLedger:
    return UsageLedger.from_transcript(transcript, prices=prices)


def format_k(tokens: int) -> str:
    """Token count in thousands with two decimals, e.g. 4400 -> '4.40'."""
    return f"{tokens / 1000:.2f}"


def parse_k(rendered: str) -> int:
    """Inverse of format_k; exact for totals at 10-token granularity."""
    return round(float(rendered) * 1000)


def format_tokens_pair(input_tokens: int, output_tokens: int) -> str:
    return f"{format_k(input_tokens)}/{format_k(output_tokens)}"


# ---- route statistics -------------------------------------------------------

@dataclass(frozen=True)
class RouteBucket:
    route: Route
    count: int
    correct: int

    @property
    def accuracy(self) -> Optional[float]:
        if self.count == 0:
            return None
        return 100.0 * self.correct / self.count


def route_stats(
    transcripts: Iterable[Transcript],
    gold: Optional[dict[str, str]] = None,
) -> dict[Route, RouteBucket]:
    """Per-route counts and accuracy. Gold answers come from the mapping when
    given, otherwise from each transcript's case metadata."""
    counts: dict[Route, int] = {r: 0 for r in Route}
    correct: dict[Route, int] = {r: 0 for r in Route}
    for t in transcripts:
        verdict = t.verdict()
        if verdict is None:
            continue
        if gold is not None:
            if t.case_id not in gold:
                raise MissingGold(t.case_id)
            answer = gold[t.case_id]
        else:
            answer = t.case_meta.get("gold_answer")
            if answer is None:
                raise MissingGold(t.case_id)
        counts[verdict.route_taken] += 1
        if verdict.answer == answer:
            correct[verdict.route_taken] += 1
    return {r: RouteBucket(route=r, count=counts[r], correct=correct[r]) for r in Route}


# ---- judge-assisted metrics ---------------------------------------------------

@dataclass(frozen=True)
class NoiseMetrics:
    evidence_sentences: int
    noise_sentences: int
    ratio: Optional[float]  # None when evidence count is zero (undefined)
    judge_model_id: str


@dataclass(frozen=True)
class CoverageMetrics:
    identified: int
    missed: int
    judge_model_id: str

    @property
    def coverage(self) -> Optional[float]:
        total = self.identified + self.missed
        if total == 0:
            return None
        return 100.0 * self.identified / total


def transcript_record_text(transcript: Transcript) -> str:
    """Flattened diagnostic record: every agent output, in order."""
    chunks = []
    for e in transcript.events:
        if isinstance(e, ModelCallEvent) and e.retry_index == 0:
            chunks.append(f"[{e.role.value}] {e.response_text}")
    return "\n".join(chunks)


_NOISE_RE = re.compile(r"evidence\s*=\s*(\d+)\s+noise\s*=\s*(\d+)", re.IGNORECASE)
_COVERAGE_RE = re.compile(r"identified\s*=\s*(\d+)\s+missed\s*=\s*(\d+)", re.IGNORECASE)


def _ask_judge(judge_backend: ChatBackend, prompt: str, judge_model_id: str) -> str:
    request = ChatRequest(
        messages=(ChatMessage("user", prompt),),
        temperature=0.0,
        model_id=judge_model_id,
    )
    try:
        return judge_backend.complete(request).text
    except BackendUnavailable as exc:
        raise JudgeUnavailable(str(exc)) from exc


def judge_noise_ratio(
    transcript: Transcript,
    judge_backend: ChatBackend,
    judge_prompt_body: str,
    judge_model_id: str = "judge",
) -> NoiseMetrics:
    """Noise-to-evidence sentence ratio, with classification delegated to a judge model."""
    if not transcript.events:
        raise JudgeOutputUnparsable("empty transcript")
    from .prompts import render  # local import avoids a cycle at module load

    prompt = render(judge_prompt_body, {"DIAGNOSTIC RECORD": transcript_record_text(transcript)})
    reply = _ask_judge(judge_backend, prompt, judge_model_id)
    match = _NOISE_RE.search(reply)
    if not match:
        raise JudgeOutputUnparsable(f"no evidence/noise counts in judge reply: {reply[:120]!r}")
    evidence, noise = int(match.group(1)), int(match.group(2))
    ratio = noise / evidence if evidence > 0 else None
    return NoiseMetrics(
        evidence_sentences=evidence,
        noise_sentences=noise,
        ratio=ratio,
        judge_model_id=judge_model_id,
    )


def judge_evidence_coverage(
    transcript: Transcript,
    judge_backend: ChatBackend,
    judge_prompt_body: str,
    judge_model_id: str = "judge",
) -> CoverageMetrics:
    """Identified vs. missed key-evidence counts, judged externally."""
    if not transcript.events:
        raise JudgeOutputUnparsable("empty transcript")
    from .prompts import render

    prompt = render(
        judge_prompt_body,
        {
            "QUESTION": str(transcript.case_meta.get("question", "")),
            "DIAGNOSTIC RECORD": transcript_record_text(transcript),
        },
    )
    reply = _ask_judge(judge_backend, prompt, judge_model_id)
    match = _COVERAGE_RE.search(reply)
    if not match:
        raise JudgeOutputUnparsable(f"no identified/missed counts in judge reply: {reply[:120]!r}")
    return CoverageMetrics(
        identified=int(match.group(1)),
        missed=int(match.group(2)),
        judge_model_id=judge_model_id,
    )
