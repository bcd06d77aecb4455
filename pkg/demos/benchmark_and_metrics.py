"""Run a tiny synthetic benchmark and compute the quality metrics.

Everything is scripted: the agents answer A everywhere, so cases whose
gold answer is A come out correct and the rest wrong. The point is the
report shape, not the medicine.
"""

import tempfile
from pathlib import Path

from ucagents import (
    DatasetRecord,
    PriceTable,
    RunConfig,
    ScriptedBackend,
    ScriptEntry,
    route_stats,
    run_benchmark,
    trajectory_entropy,
)
from ucagents.harness import render_report_table
from ucagents.metrics import hypotheses_from_transcript
from ucagents.prompts import format_report_text, format_review_text
from ucagents.transcript import Transcript

records = [
    DatasetRecord("pe-01", "Pleural effusion present?", ("yes", "no"), "A"),
    DatasetRecord("pe-02", "Pneumothorax present?", ("yes", "no"), "B"),
    DatasetRecord("pe-03", "Cardiomegaly present?", ("yes", "no"), "A", subset="open"),
    DatasetRecord("pe-04", "Consolidation present?", ("yes", "no"), "A"),
]

backend = ScriptedBackend(
    [
        ScriptEntry.when_prompt_contains(
            "[Previous Reports]", format_review_text("Consensus checks out.", "A")
        ),
        ScriptEntry.when_prompt_contains(
            "[Medical Case]", format_report_text("Finding is visible.", "A")
        ),
    ]
)

out_dir = Path(tempfile.mkdtemp()) / "demo_run"
config = RunConfig(
    output_dir=str(out_dir),
    trials=2,
    prices={"input_per_1k": 0.01, "output_per_1k": 0.03},
)

report = run_benchmark(records, config, backend)
print(render_report_table(report))

# transcripts persist per case, so metrics can be computed after the fact
transcripts = [Transcript.load(p) for p in sorted((out_dir / "trial_0").glob("*.json"))]

for t in transcripts:
    letters = hypotheses_from_transcript(t)
    entropy = trajectory_entropy(letters)
    print(f"{t.case_id}: hypotheses={letters} entropy={entropy.entropy_bits:.3f} bits")

print()
for route, bucket in route_stats(transcripts).items():
    acc = f"{bucket.accuracy:.1f}%" if bucket.accuracy is not None else "-"
    print(f"{route.value}: {bucket.count} cases, accuracy {acc}")

cost = report.ledger.cost(PriceTable(input_per_1k=0.01, output_per_1k=0.03))
print(f"\ntotal spend across both trials: ${cost:.4f}")
