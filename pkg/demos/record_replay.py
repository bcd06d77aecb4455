"""Record a deliberation, replay it offline, and watch divergence detection.

Recording wraps any backend; here the inner backend is scripted so the demo
is self-contained, but the same wrapper captures live HTTP sessions.
"""

import tempfile
from pathlib import Path

from ucagents import (
    EngineConfig,
    MedicalCase,
    RecordingBackend,
    ReplayBackend,
    ScriptedBackend,
    ScriptEntry,
    run_case,
)
from ucagents.errors import ReplayDivergence
from ucagents.prompts import (
    format_inquiries_text,
    format_report_text,
    format_verdict_text,
)
from ucagents.types import Inquiry

case = MedicalCase.from_texts(
    case_id="rr-001",
    question="Is the lesion malignant?",
    option_texts=["malignant", "benign", "indeterminate"],
    gold_answer="B",
)
config = EngineConfig()

inner = ScriptedBackend(
    [
        ScriptEntry.in_order(format_report_text("Irregular border noted.", "A")),
        ScriptEntry.in_order(format_report_text("Smooth capsule, likely benign.", "B")),
        # most specific prompt markers first: later prompts embed earlier outputs
        ScriptEntry.when_prompt_contains(
            "[Response to your inquiries]",
            format_verdict_text("The benign reading withstood the audit.", "B"),
        ),
        ScriptEntry.when_prompt_contains(
            "[Critics on Assessments]",
            format_inquiries_text(
                [
                    Inquiry(1, "A", "What would invasion look like here?"),
                    Inquiry(2, "B", "Could the capsule be an artifact?"),
                ]
            ),
        ),
        ScriptEntry.when_prompt_contains(
            "do not change your stance", "The objection holds as stated."
        ),
        ScriptEntry.when_prompt_contains(
            "Hypothesis Auditor",
            "#Flaws: border call is subjective. #Counter Evidence: no invasion seen.",
        ),
    ]
)

recorder = RecordingBackend(inner, meta={"note": "demo session"})
live_verdict, _, _ = run_case(case, config, recorder)
print(f"live run:   answer={live_verdict.answer} via {live_verdict.route_taken.value}")

path = Path(tempfile.mkdtemp()) / "session.json"
recorder.recording.save(path)
print(f"recorded {len(recorder.recording.entries)} calls to {path}")

# replay needs no model and must reproduce the verdict exactly
from ucagents.backend import Recording

replayed_verdict, _, _ = run_case(case, config, ReplayBackend(Recording.load(path)))
print(f"replay run: answer={replayed_verdict.answer} via {replayed_verdict.route_taken.value}")
assert replayed_verdict == live_verdict

# change anything about the prompts and the replay refuses to continue
tampered = MedicalCase.from_texts(
    case_id="rr-001",
    question="Is the lesion malignant? Answer quickly.",
    option_texts=["malignant", "benign", "indeterminate"],
    gold_answer="B",
)
try:
    run_case(tampered, config, ReplayBackend(Recording.load(path)))
except ReplayDivergence as exc:
    print(f"tampered prompt detected at call position {exc.position}")
