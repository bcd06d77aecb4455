"""Prompt template rendering and strict output-grammar parsing.

Templates are plain-text assets with ``{UPPERCASE NAME}`` placeholders,
bundled with the package and overridable via a deployment directory.
Parsers are total: every input yields either parsed fields or a typed
:class:`~ucagents.errors.ParseError`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Union

from .errors import (
    AnswerNotALetter,
    DuplicateExpert,
    MarkerMissing,
    MissingBinding,
    UnparsableHeader,
    WrongArity,
)
from .types import Inquiry

TEMPLATE_FILES = {
    "tier1": "tier1.txt",
    "tier2": "tier2.txt",
    "critic": "critic.txt",
    "leader_inquiry": "leader_inquiry.txt",
    "critic_response": "critic_response.txt",
    "leader_verdict": "leader_verdict.txt",
    "judge_noise": "judge_noise.txt",
    "judge_evidence": "judge_evidence.txt",
}

_PLACEHOLDER_RE = re.compile(r"\{([A-Z][A-Z0-9 ]*)\}")


def render(body: str, bindings: dict[str, str]) -> str:
    """Literal placeholder substitution; unbound placeholder is an error."""

    def _sub(match: re.Match) -> str:
        name = match.group(1)
        if name not in bindings:
            raise MissingBinding(name)
        return bindings[name]

    return _PLACEHOLDER_RE.sub(_sub, body)


class TemplateSet:
    """The six role templates plus judge templates, loaded once at startup."""

    def __init__(self, bodies: dict[str, str]):
        self.bodies = bodies

    @classmethod
    def bundled(cls) -> "TemplateSet":
        pkg = resources.files("ucagents") / "templates"
        return cls({name: (pkg / fn).read_text(encoding="utf-8") for name, fn in TEMPLATE_FILES.items()})

    @classmethod
    def from_dir(cls, path: Union[str, Path]) -> "TemplateSet":
        """Load overrides from a directory; missing files keep bundled defaults."""
        base = cls.bundled().bodies
        root = Path(path)
        for name, fn in TEMPLATE_FILES.items():
            candidate = root / fn
            if candidate.exists():
                base[name] = candidate.read_text(encoding="utf-8")
        return cls(base)

    def render(self, name: str, bindings: dict[str, str]) -> str:
        return render(self.bodies[name], bindings)


# ---- parsed output shapes ---------------------------------------------------

@dataclass(frozen=True)
class ReportFields:
    reasoning: str
    answer: str


@dataclass(frozen=True)
class CriticFields:
    flaws: str
    counter_evidence: str


@dataclass(frozen=True)
class VerdictFields:
    final_reasoning: str
    final_answer: str


# ---- parsing ----------------------------------------------------------------

_REASONING_RE = re.compile(r"#\s*(?:Review\s+)?Reasoning\s*:")
_ANSWER_RE = re.compile(r"#\s*Answer\s*:")
_FLAWS_RE = re.compile(r"#\s*Flaws\s*:")
# the bundled critic template marks Flaws with '#' but Counter Evidence without;
# both spellings are accepted
_COUNTER_RE = re.compile(r"#?\s*Counter\s+Evidence\s*:")
_FINAL_REASONING_RE = re.compile(r"#\s*Final\s+Reasoning\s*:")
_FINAL_ANSWER_RE = re.compile(r"#\s*Final\s+Answer\s*:")

_INQUIRY_HEADER_RE = re.compile(
    r"@\s*To\s+Expert\s+(\d+)\s+who\s+reviews\s+(?:Option\s+)?([A-Za-z])\s*:",
    re.IGNORECASE,
)
_INQUIRY_AT_RE = re.compile(r"@\s*To\s+Expert", re.IGNORECASE)


def _extract_last(raw: str, marker: re.Pattern, stops: list[re.Pattern]) -> Optional[str]:
    """Field text after the LAST occurrence of ``marker`` up to the next marker.

    Models sometimes restate the required format before complying, so the
    last occurrence wins.
    """
    matches = list(marker.finditer(raw))
    if not matches:
        return None
    start = matches[-1].end()
    rest = raw[start:]
    cut = len(rest)
    for stop in stops:
        hit = stop.search(rest)
        if hit:
            cut = min(cut, hit.start())
    return rest[:cut].strip()


def normalize_answer(token: str) -> str:
    """Strip whitespace/punctuation, uppercase; exactly one letter required."""
    words = re.findall(r"[A-Za-z]+", token)
    if len(words) != 1 or len(words[0]) != 1:
        raise AnswerNotALetter(token)
    return words[0].upper()


def parse_report(raw: str, grammar: str = "tier1") -> ReportFields:
    """Parse a diagnostic report: ``#Reasoning:``/``#Review Reasoning:`` + ``#Answer:``."""
    reasoning = _extract_last(raw, _REASONING_RE, [_ANSWER_RE, _REASONING_RE])
    if reasoning is None:
        marker = "#Review Reasoning:" if grammar == "tier2" else "#Reasoning:"
        raise MarkerMissing(marker)
    answer_token = _extract_last(raw, _ANSWER_RE, [_REASONING_RE])
    if answer_token is None:
        raise MarkerMissing("#Answer:")
    return ReportFields(reasoning=reasoning, answer=normalize_answer(answer_token))


def parse_critic_report(raw: str) -> CriticFields:
    flaws = _extract_last(raw, _FLAWS_RE, [_COUNTER_RE])
    if flaws is None:
        raise MarkerMissing("#Flaws:")
    counter = _extract_last(raw, _COUNTER_RE, [_FLAWS_RE])
    if counter is None:
        raise MarkerMissing("Counter Evidence:")
    return CriticFields(flaws=flaws, counter_evidence=counter)


def parse_leader_verdict(raw: str) -> VerdictFields:
    reasoning = _extract_last(raw, _FINAL_REASONING_RE, [_FINAL_ANSWER_RE])
    if reasoning is None:
        raise MarkerMissing("#Final Reasoning:")
    answer_token = _extract_last(raw, _FINAL_ANSWER_RE, [_FINAL_REASONING_RE])
    if answer_token is None:
        raise MarkerMissing("#Final Answer:")
    return VerdictFields(final_reasoning=reasoning, final_answer=normalize_answer(answer_token))


def parse_inquiries(raw: str) -> list[Inquiry]:
    """Parse the leader's inquiry output into exactly two addressed questions."""
    headers = list(_INQUIRY_HEADER_RE.finditer(raw))
    at_count = len(_INQUIRY_AT_RE.findall(raw))
    if at_count > len(headers):
        raise UnparsableHeader(f"{at_count - len(headers)} inquiry header(s) malformed")
    if len(headers) != 2:
        raise WrongArity(len(headers))
    inquiries: list[Inquiry] = []
    seen: set[int] = set()
    for i, header in enumerate(headers):
        index = int(header.group(1))
        option = header.group(2).upper()
        end = headers[i + 1].start() if i + 1 < len(headers) else len(raw)
        question = raw[header.end():end].strip()
        if index in seen:
            raise DuplicateExpert(index)
        seen.add(index)
        if not question:
            raise UnparsableHeader(f"empty question for expert {index}")
        inquiries.append(Inquiry(addressed_to=index, reviewed_option=option, question=question))
    if seen != {1, 2}:
        raise UnparsableHeader(f"expert indices must be 1 and 2, got {sorted(seen)}")
    return inquiries


def parse_critic_response(raw: str) -> str:
    text = raw.strip()
    if not text:
        raise MarkerMissing("nonempty response")
    return text


# ---- canonical rendering (round-trip of parsed fields) -----------------------

def format_report_text(reasoning: str, answer: str) -> str:
    return f"#Reasoning: {reasoning} #Answer: {answer}"


def format_review_text(reasoning: str, answer: str) -> str:
    return f"#Review Reasoning: {reasoning} #Answer: {answer}"


def format_critic_text(flaws: str, counter_evidence: str) -> str:
    return f"#Flaws: {flaws} Counter Evidence: {counter_evidence}"


def format_inquiries_text(inquiries: list[Inquiry]) -> str:
    blocks = [
        f"@ To Expert {q.addressed_to} who reviews {q.reviewed_option}: {q.question}"
        for q in inquiries
    ]
    return "Inquiries:" + " ".join(blocks)


def format_verdict_text(final_reasoning: str, final_answer: str) -> str:
    return f"#Final Reasoning: {final_reasoning} #Final Answer: {final_answer}"


# ---- corrective retry instruction (versioned, fixed text) --------------------

CORRECTIVE_VERSION = 1
_CORRECTIVE_PREFIX = "Your previous output violated the required format. Output strictly: "

FORMAT_REMINDERS = {
    "tier1": "#Reasoning: <3-5 sentences of reasoning> #Answer: <a single letter of your choice, e.g. A or B.>.",
    "tier2": "#Review Reasoning: <3-5 sentence paragraph> #Answer: <a single letter of your choice, e.g. A or B>.",
    "critic": "#Flaws: <3-5 concise sentences> Counter Evidence: <up to 4 sentences>.",
    "leader_inquiry": "Inquiries:@ To Expert 1 who reviews <option letter>: <question> @ To Expert 2 who reviews <option letter>: <question>",
    "critic_response": "<1-3 sentences answering the leader's question, without changing your stance>",
    "leader_verdict": "#Final Reasoning: <6-8 sentence comparative summary> #Final Answer: <only the single letter of your choice, e.g. A or B>.",
}


def corrective_instruction(grammar: str) -> str:
    return _CORRECTIVE_PREFIX + FORMAT_REMINDERS[grammar]
