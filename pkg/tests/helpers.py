"""Shared fixtures: scripted deliberations and randomized agent scripts."""

from __future__ import annotations

import random
from typing import Optional, Sequence

from ucagents import prompts
from ucagents.backend import ScriptedBackend, ScriptEntry
from ucagents.types import Inquiry, MedicalCase


def make_case(
    n_options: int = 2,
    case_id: str = "case-1",
    gold: Optional[str] = "A",
    question: str = "Is there a lesion in the image?",
) -> MedicalCase:
    texts = [f"option text {i}" for i in range(n_options)]
    return MedicalCase.from_texts(case_id, question, texts, gold_answer=gold)


def expected_candidates(
    tier1: tuple[str, str], supervisor: Optional[str]
) -> Optional[tuple[str, str]]:
    if tier1[0] != tier1[1]:
        return tier1
    if supervisor is not None and supervisor != tier1[0]:
        return (tier1[0], supervisor)
    return None


def protocol_script(
    tier1: tuple[str, str],
    supervisor: Optional[str] = None,
    leader: Optional[str] = None,
    extra_entries: Sequence[ScriptEntry] = (),
) -> ScriptedBackend:
    """Script a full deliberation from the letters each agent should assert.

    Tier-1 answers are sequence entries (the two prompts are identical by
    design); every later role is matched by a prompt substring unique to
    its template.
    """
    candidates = expected_candidates(tier1, supervisor)
    entries: list[ScriptEntry] = list(extra_entries)
    entries += [
        ScriptEntry.in_order(prompts.format_report_text(f"Initial read {i + 1}.", answer))
        for i, answer in enumerate(tier1)
    ]
    if supervisor is not None:
        entries.append(
            ScriptEntry.when_prompt_contains(
                "[Previous Reports]",
                prompts.format_review_text("Consensus reviewed.", supervisor),
            )
        )
    if candidates is not None:
        assert leader is not None, "tier-3 route needs a leader answer"
        entries += [
            ScriptEntry.when_prompt_contains(
                "[Response to your inquiries]",
                prompts.format_verdict_text("Comparative verdict.", leader),
            ),
            ScriptEntry.when_prompt_contains(
                "do not change your stance", "My critique stands as written."
            ),
            ScriptEntry.when_prompt_contains(
                "[Critics on Assessments]",
                prompts.format_inquiries_text(
                    [
                        Inquiry(1, candidates[0], "What weakens your strongest objection?"),
                        Inquiry(2, candidates[1], "Which finding contradicts your critique?"),
                    ]
                ),
            ),
            ScriptEntry.when_prompt_contains(
                "Hypothesis Auditor",
                prompts.format_critic_text("The margin claim is weak.", "No confirming view."),
            ),
        ]
    return ScriptedBackend(entries)


def sample_agent_letters(
    rng: random.Random,
    case: MedicalCase,
    p_tier1_gold: float,
    p_supervisor_gold: float = 1.0,
    p_leader_gold: float = 1.0,
) -> tuple[tuple[str, str], Optional[str], Optional[str]]:
    """Draw the letters a stochastic agent team would assert for one case."""
    gold = case.gold_answer
    wrong = [letter for letter in case.letters if letter != gold]

    def draw(p_gold: float) -> str:
        return gold if rng.random() < p_gold else rng.choice(wrong)

    tier1 = (draw(p_tier1_gold), draw(p_tier1_gold))
    supervisor = draw(p_supervisor_gold) if tier1[0] == tier1[1] else None
    leader = None
    if expected_candidates(tier1, supervisor) is not None:
        leader = draw(p_leader_gold)
    return tier1, supervisor, leader


def final_answer_of(tier1: tuple[str, str], supervisor: Optional[str], leader: Optional[str]) -> str:
    """Hand-rolled state machine oracle over pre-drawn agent letters."""
    if tier1[0] != tier1[1]:
        return leader
    if supervisor == tier1[0]:
        return tier1[0]
    return leader
