"""Walk one case through each of the three deliberation routes.

The backend is scripted, so the demo runs offline and always prints the
same trace. Swap in an HTTPBackend to run against a live model.
"""

from ucagents import EngineConfig, MedicalCase, ScriptedBackend, ScriptEntry, run_case
from ucagents.prompts import (
    format_inquiries_text,
    format_report_text,
    format_review_text,
    format_verdict_text,
)
from ucagents.types import Inquiry

case = MedicalCase.from_texts(
    case_id="demo-001",
    question="Does the chest radiograph show a pleural effusion?",
    option_texts=["yes", "no"],
    gold_answer="A",
)
config = EngineConfig()


def backend_for(expert_1, expert_2, supervisor=None, leader=None):
    # tier-1 answers arrive in call order; later roles match on a phrase
    # unique to their prompt template
    entries = [
        ScriptEntry.in_order(format_report_text("Blunted costophrenic angle.", expert_1)),
        ScriptEntry.in_order(format_report_text("Meniscus sign at the left base.", expert_2)),
    ]
    if supervisor:
        entries.append(
            ScriptEntry.when_prompt_contains(
                "[Previous Reports]",
                format_review_text("The shared finding holds up.", supervisor),
            )
        )
    if leader:
        # rule order matters: the inquiry and verdict prompts embed earlier
        # outputs, so the most specific markers must be matched first
        entries += [
            ScriptEntry.when_prompt_contains(
                "[Response to your inquiries]",
                format_verdict_text("The effusion evidence survived both critiques.", leader),
            ),
            ScriptEntry.when_prompt_contains(
                "[Critics on Assessments]",
                format_inquiries_text(
                    [
                        Inquiry(1, expert_1, "Could positioning explain the blunting?"),
                        Inquiry(2, expert_2 if expert_2 != expert_1 else supervisor,
                                "What rules out a chronic scar?"),
                    ]
                ),
            ),
            ScriptEntry.when_prompt_contains(
                "do not change your stance", "My critique stands; the risk remains."
            ),
            ScriptEntry.when_prompt_contains(
                "Hypothesis Auditor",
                "#Flaws: relies on a single view. #Counter Evidence: no lateral film.",
            ),
        ]
    return ScriptedBackend(entries)


def show(title, verdict, transcript, ledger):
    print(f"--- {title} ---")
    print(f"route:  {verdict.route_taken.value}")
    print(f"answer: {verdict.answer} (gold {case.gold_answer})")
    print(f"calls:  {ledger.api_calls}")
    for decision in transcript.routing_decisions():
        print(f"  {decision.stage.value} -> {decision.destination.value}"
              + (f" candidates={decision.candidates}" if decision.candidates else ""))
    print()


# route 1: both experts agree and the supervisor confirms -> 3 calls
verdict, transcript, ledger = run_case(case, config, backend_for("A", "A", supervisor="A"))
show("consensus confirmed (T1 -> T2)", verdict, transcript, ledger)

# route 2: the experts diverge, so the case skips straight to the audit -> 8 calls
verdict, transcript, ledger = run_case(case, config, backend_for("A", "B", leader="A"))
show("divergence audited (T1 -> T3)", verdict, transcript, ledger)

# route 3: false consensus caught by the supervisor -> 9 calls
verdict, transcript, ledger = run_case(
    case, config, backend_for("B", "B", supervisor="A", leader="A")
)
show("false consensus escalated (T1 -> T2 -> T3)", verdict, transcript, ledger)
print("final reasoning:", verdict.final_reasoning)
