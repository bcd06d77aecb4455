"""Dataset ingestion, benchmark runs, report emission, and the CLI."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from ucagents import prompts
from ucagents.backend import ScriptedBackend, ScriptEntry
from ucagents.cli import main as cli_main
from ucagents.errors import DuplicateCaseId, InvalidCase, MalformedRecord
from ucagents.harness import (
    CaseRow,
    DatasetRecord,
    RunConfig,
    RunReport,
    TrialReport,
    build_backend,
    emit_report,
    ingest,
    record_to_case,
    render_report_table,
    replay_recordings,
    run_benchmark,
    score_transcripts,
)
from ucagents.metrics import LedgerRow, UsageLedger, route_stats
from ucagents.transcript import Transcript

# 1x1 px PNG
PNG_BYTES = bytes.fromhex(
    "89504e470d0a1a0a0000000d4948445200000001000000010802000000907753"
    "de0000000c4944415408d763f8cfc000000301010018dd8db00000000049454e"
    "44ae426082"
)


def write_dataset(path: Path, rows) -> Path:
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8")
    return path


def valid_row(case_id="c1", **overrides):
    row = {
        "case_id": case_id,
        "question": "Is there a lesion?",
        "options": ["yes", "no"],
        "gold": "A",
    }
    row.update(overrides)
    return row


class TestIngest:
    def test_valid_records(self, tmp_path):
        path = write_dataset(
            tmp_path / "d.jsonl",
            [valid_row("c1"), valid_row("c2", subset="open", field_hint="radiology")],
        )
        records = ingest(path)
        assert [r.case_id for r in records] == ["c1", "c2"]
        assert records[1].subset == "open"
        assert records[1].field_hint == "radiology"

    def test_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text(json.dumps(valid_row()) + "\n\n\n", encoding="utf-8")
        assert len(ingest(path)) == 1

    def test_invalid_json_reports_line_number(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text(json.dumps(valid_row()) + "\n{not json\n", encoding="utf-8")
        with pytest.raises(MalformedRecord) as err:
            ingest(path)
        assert err.value.line_number == 2

    def test_missing_field(self, tmp_path):
        row = valid_row()
        del row["gold"]
        path = write_dataset(tmp_path / "d.jsonl", [row])
        with pytest.raises(MalformedRecord):
            ingest(path)

    def test_gold_outside_options(self, tmp_path):
        # four options span A-D, so E can never be correct
        row = valid_row(options=["a", "b", "c", "d"], gold="E")
        path = write_dataset(tmp_path / "d.jsonl", [row])
        with pytest.raises(MalformedRecord) as err:
            ingest(path)
        assert err.value.line_number == 1

    def test_bad_subset(self, tmp_path):
        path = write_dataset(tmp_path / "d.jsonl", [valid_row(subset="half-open")])
        with pytest.raises(MalformedRecord):
            ingest(path)

    def test_duplicate_case_id(self, tmp_path):
        path = write_dataset(tmp_path / "d.jsonl", [valid_row("c1"), valid_row("c1")])
        with pytest.raises(DuplicateCaseId):
            ingest(path)

    def test_options_must_be_strings(self, tmp_path):
        path = write_dataset(tmp_path / "d.jsonl", [valid_row(options=["yes", 2])])
        with pytest.raises(MalformedRecord):
            ingest(path)


class TestRecordToCase:
    def test_text_only(self):
        case = record_to_case(DatasetRecord("c", "q?", ("yes", "no"), "A"))
        assert case.image is None
        assert case.letters == ("A", "B")

    def test_image_loading_and_media_type(self, tmp_path):
        img = tmp_path / "scan.jpg"
        img.write_bytes(PNG_BYTES)
        record = DatasetRecord("c", "q?", ("yes", "no"), "A", image_path="scan.jpg")
        case = record_to_case(record, base_dir=tmp_path)
        assert case.image.media_type == "image/jpeg"
        assert case.image.data == PNG_BYTES

    def test_image_size_guard(self, tmp_path):
        img = tmp_path / "scan.png"
        img.write_bytes(b"0" * 100)
        record = DatasetRecord("c", "q?", ("yes", "no"), "A", image_path=str(img))
        with pytest.raises(InvalidCase):
            record_to_case(record, max_image_bytes=50)


# reusable case-agnostic agent rules: everyone says A, so gold=A scores 100%
def all_a_backend() -> ScriptedBackend:
    return ScriptedBackend(agent_rules())


def agent_rules(poison: str = None) -> list[ScriptEntry]:
    rules = [
        ScriptEntry.when_prompt_contains(
            "[Previous Reports]", prompts.format_review_text("Consensus verified.", "A")
        ),
        ScriptEntry.when_prompt_contains(
            "[Medical Case]", prompts.format_report_text("Lesion visible.", "A")
        ),
    ]
    if poison:
        rules.insert(0, ScriptEntry.when_prompt_contains(poison, "not a parseable report"))
    return rules


class TestRunBenchmark:
    def test_all_correct(self, tmp_path):
        records = [
            DatasetRecord(f"c{i}", "Is there a lesion?", ("yes", "no"), "A") for i in range(6)
        ]
        config = RunConfig(output_dir=str(tmp_path / "out"), max_parallel_cases=3)
        report = run_benchmark(records, config, all_a_backend())
        mean, std = report.full_accuracy
        assert mean == 100.0
        assert std is None  # single trial
        assert report.case_failures == 0
        assert report.ledger.api_calls == 6 * 3
        saved = sorted((tmp_path / "out" / "trial_0").glob("*.json"))
        assert len(saved) == 6

    def test_failure_rows_do_not_abort(self, tmp_path):
        records = [
            DatasetRecord("good", "Is there a lesion?", ("yes", "no"), "A"),
            DatasetRecord("bad", "UNPARSEABLE CASE MARKER", ("yes", "no"), "A"),
        ]
        backend = ScriptedBackend(agent_rules(poison="UNPARSEABLE CASE MARKER"))
        config = RunConfig(output_dir=str(tmp_path / "out"), max_parallel_cases=1)
        report = run_benchmark(records, config, backend)
        assert report.case_failures == 1
        trial = report.trials[0]
        assert trial.unanswered == 1
        # accuracy over answered cases only
        assert trial.full_accuracy == 100.0
        failed = [r for r in trial.rows if not r.answered][0]
        assert failed.case_id == "bad"
        assert "ParseExhausted" in failed.error
        # the partial transcript of the failed case is still persisted
        partial = Transcript.load(tmp_path / "out" / "trial_0" / "bad.json")
        assert partial.verdict() is None
        # both experts see the poisoned case: (initial call + 2 retries) each
        assert len(partial.model_calls()) == 6

    def test_mixed_subsets(self, tmp_path):
        records = [
            DatasetRecord("c1", "Is there a lesion?", ("yes", "no"), "A", subset="closed"),
            DatasetRecord("c2", "Is there a lesion?", ("yes", "no"), "B", subset="open"),
        ]
        config = RunConfig(output_dir=str(tmp_path / "out"))
        report = run_benchmark(records, config, all_a_backend())
        trial = report.trials[0]
        assert trial.full_accuracy == 50.0
        assert trial.closed_accuracy == 100.0

    def test_multi_trial_std(self, tmp_path):
        records = [
            DatasetRecord(f"c{i}", "Is there a lesion?", ("yes", "no"), "A") for i in range(4)
        ]
        config = RunConfig(output_dir=str(tmp_path / "out"), trials=3)
        report = run_benchmark(records, config, all_a_backend())
        mean, std = report.full_accuracy
        assert (mean, std) == (100.0, 0.0)
        assert len(report.trials) == 3
        assert (tmp_path / "out" / "trial_2").is_dir()

    def test_deterministic_reports(self, tmp_path):
        records = [
            DatasetRecord(f"c{i}", "Is there a lesion?", ("yes", "no"), "A") for i in range(5)
        ]

        def run(tag):
            config = RunConfig(output_dir=str(tmp_path / tag), max_parallel_cases=4)
            return run_benchmark(records, config, all_a_backend()).to_dict()

        assert run("a") == run("b")

    def test_empty_dataset_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            run_benchmark([], RunConfig(output_dir=str(tmp_path)), all_a_backend())


class TestScoreTranscripts:
    def test_matches_live_report(self, tmp_path):
        records = [
            DatasetRecord("c1", "Is there a lesion?", ("yes", "no"), "A"),
            DatasetRecord("c2", "Is there a lesion?", ("yes", "no"), "B"),
        ]
        out = tmp_path / "out"
        config = RunConfig(output_dir=str(out))
        live = run_benchmark(records, config, all_a_backend())
        scored = score_transcripts(out)
        assert scored.full_accuracy == live.full_accuracy
        assert scored.ledger.to_dict() == live.ledger.to_dict()
        routes = {r.value: b.count for r, b in scored.route_table.items()}
        assert routes["T1_T2"] == 2


class TestReplay:
    def test_recorded_run_replays_identically(self, tmp_path):
        records = [
            DatasetRecord("c1", "Is there a lesion?", ("yes", "no"), "A"),
            DatasetRecord("c2", "Is there a lesion?", ("yes", "no"), "B"),
        ]
        out = tmp_path / "out"
        config = RunConfig(output_dir=str(out), record_sessions=True)
        live = run_benchmark(records, config, all_a_backend())
        replayed = replay_recordings(out / "trial_0" / "recordings", tmp_path / "replay")
        assert replayed.full_accuracy[0] == live.full_accuracy[0]
        assert replayed.case_failures == 0
        live_rows = {r.case_id: r.answer for r in live.trials[0].rows}
        for row in replayed.trials[0].rows:
            assert row.answer == live_rows[row.case_id]


class TestReportRendering:
    @staticmethod
    def _row(case_id, correct):
        return CaseRow(
            case_id=case_id, subset="closed", answered=True,
            answer="A", gold="A" if correct else "B", correct=correct, route="T1_T2",
        )

    def test_mean_and_population_std(self):
        # trial accuracies 60 and 62 -> 61.0 with population std 1.0
        t0 = TrialReport(0, [self._row(f"a{i}", i < 3) for i in range(5)])
        t1 = TrialReport(1, [self._row(f"b{i}", i < 31) for i in range(50)])
        report = RunReport(trials=[t0, t1], route_table=route_stats([]), ledger=UsageLedger())
        assert (t0.full_accuracy, t1.full_accuracy) == (60.0, 62.0)
        text = render_report_table(report)
        assert "61.0±1.0" in text

    def test_token_thousands_rendering(self):
        ledger = UsageLedger(rows=[LedgerRow("x", 4400, 370, False)])
        report = RunReport(trials=[], route_table=route_stats([]), ledger=ledger)
        assert "4.40/0.37" in render_report_table(report)

    def test_empty_report_renders_dashes(self):
        report = RunReport(
            trials=[TrialReport(0, [])], route_table=route_stats([]), ledger=UsageLedger()
        )
        text = render_report_table(report)
        assert "Accuracy full-set: -" in text
        for line in text.splitlines():
            if line.startswith("T1_"):
                assert line.endswith("-")

    def test_emit_report_files(self, tmp_path):
        report = RunReport(
            trials=[TrialReport(0, [self._row("c", True)])],
            route_table=route_stats([]),
            ledger=UsageLedger(),
        )
        written = emit_report(report, tmp_path / "rep")
        names = {p.name for p in written}
        assert names == {"report.json", "report.txt"}
        doc = json.loads((tmp_path / "rep" / "report.json").read_text())
        assert doc["full_accuracy_mean"] == 100.0
        assert doc["case_failures"] == 0


class TestRunConfig:
    def test_unknown_keys_rejected(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"trials": 1, "banana": True}))
        with pytest.raises(ValueError):
            RunConfig.from_file(path)

    def test_engine_overrides(self):
        config = RunConfig(engine={"tier1_temperature": 0.9, "max_parse_retries": 5})
        engine = config.engine_config()
        assert engine.tier1_temperature == 0.9
        assert engine.max_parse_retries == 5

    def test_invalid_counts(self):
        with pytest.raises(ValueError):
            RunConfig(trials=0)
        with pytest.raises(ValueError):
            RunConfig(max_parallel_cases=0)

    def test_build_backend_script_mode(self, tmp_path):
        script = tmp_path / "script.json"
        script.write_text(json.dumps([{"match": "x", "response": "y"}]))
        backend = build_backend({"mode": "script", "path": "script.json"}, base_dir=tmp_path)
        assert isinstance(backend, ScriptedBackend)

    def test_build_backend_unknown_mode(self):
        with pytest.raises(ValueError):
            build_backend({"mode": "quantum"})


# ---- CLI -------------------------------------------------------------------

def _script_entries(poison: str = None) -> list[dict]:
    return [
        {"match": rule.match, "response": rule.response_text}
        for rule in agent_rules(poison=poison)
    ]


def _setup_run(tmp_path: Path, rows, poison: str = None, extra_config: dict = None):
    dataset = write_dataset(tmp_path / "dataset.jsonl", rows)
    script = tmp_path / "script.json"
    script.write_text(json.dumps(_script_entries(poison=poison)))
    config_doc = {
        "backend": {"mode": "script", "path": "script.json"},
        "output_dir": str(tmp_path / "out"),
    }
    config_doc.update(extra_config or {})
    config = tmp_path / "config.json"
    config.write_text(json.dumps(config_doc))
    return dataset, config


class TestCLI:
    def test_run_success_exit_zero(self, tmp_path, capsys):
        dataset, config = _setup_run(tmp_path, [valid_row("c1"), valid_row("c2")])
        code = cli_main(["run", "--dataset", str(dataset), "--config", str(config)])
        assert code == 0
        out = capsys.readouterr().out
        assert "Accuracy full-set: 100.0" in out
        assert (tmp_path / "out" / "report.json").exists()

    def test_run_with_failures_exit_two(self, tmp_path):
        rows = [valid_row("good"), valid_row("bad", question="POISON QUESTION")]
        dataset, config = _setup_run(tmp_path, rows, poison="POISON QUESTION")
        code = cli_main(["run", "--dataset", str(dataset), "--config", str(config)])
        assert code == 2

    def test_run_bad_config_exit_one(self, tmp_path, capsys):
        dataset = write_dataset(tmp_path / "dataset.jsonl", [valid_row()])
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"no_such_key": 1}))
        code = cli_main(["run", "--dataset", str(dataset), "--config", str(config)])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_run_missing_dataset_exit_one(self, tmp_path):
        _, config = _setup_run(tmp_path, [valid_row()])
        code = cli_main(["run", "--dataset", str(tmp_path / "nope.jsonl"), "--config", str(config)])
        assert code == 1

    def test_score_and_inspect(self, tmp_path, capsys):
        dataset, config = _setup_run(tmp_path, [valid_row("c1")])
        assert cli_main(["run", "--dataset", str(dataset), "--config", str(config)]) == 0
        capsys.readouterr()

        assert cli_main(["score", "--transcripts", str(tmp_path / "out")]) == 0
        assert "Accuracy full-set: 100.0" in capsys.readouterr().out

        transcript = tmp_path / "out" / "trial_0" / "c1.json"
        assert cli_main(["inspect", str(transcript)]) == 0
        out = capsys.readouterr().out
        assert "Case c1" in out
        assert "VERDICT A via T1_T2" in out

    def test_replay_subcommand(self, tmp_path, capsys):
        dataset, config = _setup_run(
            tmp_path, [valid_row("c1")], extra_config={"record_sessions": True}
        )
        assert cli_main(["run", "--dataset", str(dataset), "--config", str(config)]) == 0
        capsys.readouterr()
        recordings = tmp_path / "out" / "trial_0" / "recordings"
        code = cli_main(
            ["replay", "--recordings", str(recordings), "--output", str(tmp_path / "replayed")]
        )
        assert code == 0
        assert "Accuracy full-set: 100.0" in capsys.readouterr().out

    def test_output_flag_overrides_config(self, tmp_path):
        dataset, config = _setup_run(tmp_path, [valid_row("c1")])
        override = tmp_path / "elsewhere"
        code = cli_main(
            ["run", "--dataset", str(dataset), "--config", str(config), "--output", str(override)]
        )
        assert code == 0
        assert (override / "report.json").exists()
