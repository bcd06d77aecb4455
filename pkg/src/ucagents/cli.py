"""Command-line interface: run, replay, score, inspect.

Exit codes: 0 success, 1 config or I/O error, 2 completed with case failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import UCAgentsError
from .harness import (
    RunConfig,
    build_backend,
    emit_report,
    ingest,
    render_report_table,
    replay_recordings,
    run_benchmark,
    score_transcripts,
)
from .transcript import ModelCallEvent, ParseOutcomeEvent, RoutingEvent, Transcript, VerdictEvent


def _cmd_run(args: argparse.Namespace) -> int:
    config = RunConfig.from_file(args.config)
    if args.output:
        config.output_dir = args.output
    base_dir = Path(args.dataset).parent
    records = ingest(args.dataset)
    backend = build_backend(config.backend, base_dir=Path(args.config).parent)
    report = run_benchmark(records, config, backend, base_dir=base_dir)
    emit_report(report, config.output_dir)
    print(render_report_table(report))
    return 2 if report.case_failures else 0


def _cmd_replay(args: argparse.Namespace) -> int:
    report = replay_recordings(args.recordings, args.output)
    emit_report(report, args.output)
    print(render_report_table(report))
    return 2 if report.case_failures else 0


def _cmd_score(args: argparse.Namespace) -> int:
    report = score_transcripts(args.transcripts)
    if args.output:
        emit_report(report, args.output)
    print(render_report_table(report))
    return 0


def _cmd_inspect(args: argparse.Namespace) -> int:
    transcript = Transcript.load(args.transcript)
    print(f"Case {transcript.case_id} (schema v{transcript.schema_version})")
    gold = transcript.case_meta.get("gold_answer")
    if gold:
        print(f"Gold answer: {gold}")
    for event in transcript.events:
        if isinstance(event, ModelCallEvent):
            retry = f" retry {event.retry_index}" if event.retry_index else ""
            print(
                f"[{event.seq:>3}] CALL   {event.role.value}{retry} "
                f"(temp={event.temperature}, tokens {event.input_tokens}/{event.output_tokens})"
            )
            text = event.response_text.strip().replace("\n", " ")
            print(f"      -> {text[:200]}")
        elif isinstance(event, ParseOutcomeEvent):
            status = "ok" if event.success else f"FAIL ({event.error})"
            print(f"[{event.seq:>3}] PARSE  {event.role.value}: {status}")
        elif isinstance(event, RoutingEvent):
            d = event.decision
            cands = f" candidates={d.candidates}" if d.candidates else ""
            print(
                f"[{event.seq:>3}] ROUTE  {d.stage.value} -> {d.destination.value}"
                f" (divergence={d.divergence}){cands}"
            )
        elif isinstance(event, VerdictEvent):
            v = event.verdict
            outside = " (outside candidates)" if v.chose_outside_candidates else ""
            print(f"[{event.seq:>3}] VERDICT {v.answer} via {v.route_taken.value}{outside}")
            print(f"      reasoning: {v.final_reasoning[:300]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ucagents",
        description="Three-tier deliberation engine for medical VQA benchmarks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a dataset through the engine")
    p_run.add_argument("--dataset", required=True, help="JSONL dataset path")
    p_run.add_argument("--config", required=True, help="run config JSON path")
    p_run.add_argument("--output", help="output directory (overrides config)")
    p_run.set_defaults(fn=_cmd_run)

    p_replay = sub.add_parser("replay", help="re-run recorded sessions")
    p_replay.add_argument("--recordings", required=True, help="directory of session recordings")
    p_replay.add_argument("--output", required=True, help="output directory")
    p_replay.set_defaults(fn=_cmd_replay)

    p_score = sub.add_parser("score", help="score persisted transcripts")
    p_score.add_argument("--transcripts", required=True, help="transcripts directory")
    p_score.add_argument("--output", help="optional report output directory")
    p_score.set_defaults(fn=_cmd_score)

    p_inspect = sub.add_parser("inspect", help="print one deliberation trace")
    p_inspect.add_argument("transcript", help="transcript JSON path")
    p_inspect.set_defaults(fn=_cmd_inspect)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (OSError, ValueError, json.JSONDecodeError, UCAgentsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
