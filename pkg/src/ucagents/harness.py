"""Batch runner: dataset ingestion, trial loop, scoring, and report emission."""

from __future__ import annotations

import dataclasses
import json
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

from .backend import (
    ChatBackend,
    HTTPBackend,
    HTTPBackendConfig,
    Recording,
    RecordingBackend,
    ScriptedBackend,
    ScriptEntry,
)
from .errors import (
    DuplicateCaseId,
    InvalidCase,
    MalformedRecord,
    OutputUnwritable,
    UCAgentsError,
)
from .metrics import (
    PriceTable,
    RouteBucket,
    UsageLedger,
    format_tokens_pair,
    route_stats,
)
from .protocol import EngineConfig, run_case
from .transcript import Transcript
from .types import ImagePayload, MedicalCase, Route

DEFAULT_MAX_IMAGE_BYTES = 8 * 1024 * 1024

_MEDIA_TYPES = {
    ".png": "image/png",
    ".jpg": "image/jpeg",
    ".jpeg": "image/jpeg",
    ".gif": "image/gif",
    ".bmp": "image/bmp",
    ".webp": "image/webp",
}


# ---- dataset ----------------------------------------------------------------

@dataclass(frozen=True)
class DatasetRecord:
    case_id: str
    question: str
    options: tuple[str, ...]
    gold: str
    subset: str = "closed"  # closed | open
    image_path: Optional[str] = None
    field_hint: Optional[str] = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _validate_record(raw: dict, line_number: int) -> DatasetRecord:
    for key in ("case_id", "question", "options", "gold"):
        if key not in raw:
            raise MalformedRecord(line_number, f"missing field {key!r}")
    options = raw["options"]
    if not isinstance(options, list) or not all(isinstance(o, str) for o in options):
        raise MalformedRecord(line_number, "options must be a list of strings")
    subset = raw.get("subset", "closed")
    if subset not in ("closed", "open"):
        raise MalformedRecord(line_number, f"subset must be 'closed' or 'open', got {subset!r}")
    record = DatasetRecord(
        case_id=str(raw["case_id"]),
        question=raw["question"],
        options=tuple(options),
        gold=raw["gold"],
        subset=subset,
        image_path=raw.get("image_path"),
        field_hint=raw.get("field_hint"),
    )
    try:
        record_to_case(record, load_image=False)
    except (InvalidCase, ValueError) as exc:
        raise MalformedRecord(line_number, str(exc)) from exc
    return record


def ingest(path: Union[str, Path]) -> list[DatasetRecord]:
    """Read a JSON-lines dataset file, validating every record."""
    records: list[DatasetRecord] = []
    seen: set[str] = set()
    text = Path(path).read_text(encoding="utf-8")
    for line_number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(line_number, f"invalid JSON: {exc}") from exc
        record = _validate_record(raw, line_number)
        if record.case_id in seen:
            raise DuplicateCaseId(record.case_id)
        seen.add(record.case_id)
        records.append(record)
    return records


def record_to_case(
    record: DatasetRecord,
    base_dir: Union[str, Path, None] = None,
    max_image_bytes: int = DEFAULT_MAX_IMAGE_BYTES,
    load_image: bool = True,
) -> MedicalCase:
    image = None
    if record.image_path and load_image:
        path = Path(record.image_path)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        data = path.read_bytes()
        if len(data) > max_image_bytes:
            raise InvalidCase(
                f"{record.case_id}: image {path} is {len(data)} bytes, "
                f"over the {max_image_bytes} byte limit"
            )
        media_type = _MEDIA_TYPES.get(path.suffix.lower(), "image/png")
        image = ImagePayload(data=data, media_type=media_type)
    return MedicalCase.from_texts(
        case_id=record.case_id,
        question=record.question,
        option_texts=list(record.options),
        gold_answer=record.gold,
        field_hint=record.field_hint,
        image=image,
    )


# ---- run configuration --------------------------------------------------------

@dataclass
class RunConfig:
    backend: dict = field(default_factory=dict)
    engine: dict = field(default_factory=dict)
    trials: int = 1
    max_parallel_cases: int = 4
    seed_label: str = ""
    output_dir: str = "ucagents_out"
    prices: dict = field(default_factory=dict)
    record_sessions: bool = False
    max_image_bytes: int = DEFAULT_MAX_IMAGE_BYTES

    def __post_init__(self):
        if self.max_parallel_cases < 1:
            raise ValueError("max_parallel_cases must be >= 1")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "RunConfig":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    def engine_config(self) -> EngineConfig:
        return EngineConfig(**self.engine)

    def price_table(self) -> PriceTable:
        return PriceTable(
            input_per_1k=self.prices.get("input_per_1k", 0.0),
            output_per_1k=self.prices.get("output_per_1k", 0.0),
        )


def build_backend(backend_cfg: dict, base_dir: Union[str, Path, None] = None) -> ChatBackend:
    mode = backend_cfg.get("mode", "http")
    if mode == "http":
        kwargs = {k: v for k, v in backend_cfg.items() if k != "mode"}
        return HTTPBackend(HTTPBackendConfig(**kwargs))
    if mode == "script":
        path = Path(backend_cfg["path"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        entries_doc = json.loads(path.read_text(encoding="utf-8"))
        entries = [
            ScriptEntry(
                response_text=e["response"],
                match=e.get("match"),
                input_tokens=e.get("input_tokens", 100),
                output_tokens=e.get("output_tokens", 20),
            )
            for e in entries_doc
        ]
        return ScriptedBackend(entries)
    raise ValueError(f"unknown backend mode {mode!r}")


# ---- run report ----------------------------------------------------------------

@dataclass
class CaseRow:
    case_id: str
    subset: str
    answered: bool
    answer: Optional[str] = None
    gold: Optional[str] = None
    correct: Optional[bool] = None
    route: Optional[str] = None
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class TrialReport:
    index: int
    rows: list[CaseRow]

    def _accuracy(self, rows: Sequence[CaseRow]) -> Optional[float]:
        answered = [r for r in rows if r.answered]
        if not answered:
            return None
        return 100.0 * sum(1 for r in answered if r.correct) / len(answered)

    @property
    def full_accuracy(self) -> Optional[float]:
        return self._accuracy(self.rows)

    @property
    def closed_accuracy(self) -> Optional[float]:
        return self._accuracy([r for r in self.rows if r.subset == "closed"])

    @property
    def unanswered(self) -> int:
        return sum(1 for r in self.rows if not r.answered)


def _mean_std(values: list[float]) -> tuple[Optional[float], Optional[float]]:
    clean = [v for v in values if v is not None]
    if not clean:
        return None, None
    mean = statistics.fmean(clean)
    # population std by convention; omitted below two trials
    std = statistics.pstdev(clean) if len(clean) >= 2 else None
    return mean, std


@dataclass
class RunReport:
    trials: list[TrialReport]
    route_table: dict[Route, RouteBucket]
    ledger: UsageLedger
    case_failures: int = 0

    @property
    def full_accuracy(self) -> tuple[Optional[float], Optional[float]]:
        return _mean_std([t.full_accuracy for t in self.trials])

    @property
    def closed_accuracy(self) -> tuple[Optional[float], Optional[float]]:
        return _mean_std([t.closed_accuracy for t in self.trials])

    def to_dict(self) -> dict:
        full_mean, full_std = self.full_accuracy
        closed_mean, closed_std = self.closed_accuracy
        return {
            "trials": [
                {
                    "index": t.index,
                    "full_accuracy": t.full_accuracy,
                    "closed_accuracy": t.closed_accuracy,
                    "unanswered": t.unanswered,
                    "rows": [r.to_dict() for r in t.rows],
                }
                for t in self.trials
            ],
            "full_accuracy_mean": full_mean,
            "full_accuracy_std": full_std,
            "closed_accuracy_mean": closed_mean,
            "closed_accuracy_std": closed_std,
            "route_table": {
                bucket.route.value: {
                    "count": bucket.count,
                    "correct": bucket.correct,
                    "accuracy": bucket.accuracy,
                }
                for bucket in self.route_table.values()
            },
            "usage": self.ledger.to_dict(),
            "case_failures": self.case_failures,
        }


def _format_acc(mean: Optional[float], std: Optional[float]) -> str:
    if mean is None:
        return "-"
    if std is None:
        return f"{mean:.1f}"
    return f"{mean:.1f}±{std:.1f}"


def render_report_table(report: RunReport) -> str:
    full_mean, full_std = report.full_accuracy
    closed_mean, closed_std = report.closed_accuracy
    lines = [
        "=== Benchmark Report ===",
        f"Trials:            {len(report.trials)}",
        f"Accuracy full-set: {_format_acc(full_mean, full_std)}",
        f"Accuracy closed:   {_format_acc(closed_mean, closed_std)}",
        f"Unanswered:        {sum(t.unanswered for t in report.trials)}",
        f"API Calls:         {report.ledger.api_calls}",
        "Tokens(K) In/Out:  "
        + format_tokens_pair(report.ledger.total_input_tokens, report.ledger.total_output_tokens),
        f"Cost (USD):        {report.ledger.cost():.3f}",
        "",
        "Route        Count  Accuracy",
    ]
    for route in Route:
        bucket = report.route_table[route]
        acc = f"{bucket.accuracy:.2f}%" if bucket.accuracy is not None else "-"
        lines.append(f"{route.value:<12} {bucket.count:>5}  {acc}")
    return "\n".join(lines) + "\n"


# ---- benchmark execution -------------------------------------------------------

def _run_one_case(
    record: DatasetRecord,
    engine: EngineConfig,
    run_config: RunConfig,
    backend: ChatBackend,
    trial_dir: Path,
    base_dir: Union[str, Path, None],
    templates,
) -> tuple[CaseRow, Optional[Transcript]]:
    row = CaseRow(case_id=record.case_id, subset=record.subset, answered=False, gold=record.gold)
    transcript: Optional[Transcript] = None
    case_backend = backend
    recorder: Optional[RecordingBackend] = None
    try:
        case = record_to_case(record, base_dir=base_dir, max_image_bytes=run_config.max_image_bytes)
        if run_config.record_sessions:
            recorder = RecordingBackend(
                backend,
                meta={"record": record.to_dict(), "engine": dataclasses.asdict(engine)},
            )
            case_backend = recorder
        verdict, transcript, _ledger = run_case(case, engine, case_backend, templates=templates)
        transcript.case_meta["subset"] = record.subset
        row.answered = True
        row.answer = verdict.answer
        row.correct = verdict.answer == record.gold
        row.route = verdict.route_taken.value
    except UCAgentsError as exc:
        row.error = f"{type(exc).__name__}: {exc}"
        transcript = getattr(exc, "transcript", None)
        if transcript is not None:
            transcript.case_meta["subset"] = record.subset
    # write-per-case so one failure never loses other cases' transcripts
    if transcript is not None:
        transcript.save(trial_dir / f"{record.case_id}.json")
    if recorder is not None:
        recordings_dir = trial_dir / "recordings"
        recordings_dir.mkdir(exist_ok=True)
        recorder.recording.save(recordings_dir / f"{record.case_id}.json")
    return row, transcript


def run_benchmark(
    records: Sequence[DatasetRecord],
    run_config: RunConfig,
    backend: ChatBackend,
    base_dir: Union[str, Path, None] = None,
) -> RunReport:
    """Execute every case for every trial with bounded parallelism.

    Per-case errors are captured as failure rows and never abort the run.
    """
    if not records:
        raise ValueError("dataset is empty")
    engine = run_config.engine_config()
    templates = engine.load_templates()
    out_dir = Path(run_config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    trials: list[TrialReport] = []
    all_transcripts: list[Transcript] = []
    ledger = UsageLedger(prices=run_config.price_table())
    for trial_index in range(run_config.trials):
        trial_dir = out_dir / f"trial_{trial_index}"
        trial_dir.mkdir(exist_ok=True)
        if run_config.max_parallel_cases == 1:
            results = [
                _run_one_case(r, engine, run_config, backend, trial_dir, base_dir, templates)
                for r in records
            ]
        else:
            with ThreadPoolExecutor(max_workers=run_config.max_parallel_cases) as pool:
                results = list(
                    pool.map(
                        lambda r: _run_one_case(
                            r, engine, run_config, backend, trial_dir, base_dir, templates
                        ),
                        records,
                    )
                )
        rows = [row for row, _ in results]
        for _, transcript in results:
            if transcript is not None:
                all_transcripts.append(transcript)
                ledger = ledger.merged(UsageLedger.from_transcript(transcript))
        trials.append(TrialReport(index=trial_index, rows=rows))

    ledger.prices = run_config.price_table()
    answered = [t for t in all_transcripts if t.verdict() is not None]
    report = RunReport(
        trials=trials,
        route_table=route_stats(answered),
        ledger=ledger,
        case_failures=sum(t.unanswered for t in trials),
    )
    return report


def emit_report(report: RunReport, out_dir: Union[str, Path], formats: Sequence[str] = ("structured", "table")) -> list[Path]:
    """Write the structured report and/or the human-readable table."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written: list[Path] = []
        if "structured" in formats:
            path = out / "report.json"
            path.write_text(
                json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
            )
            written.append(path)
        if "table" in formats:
            path = out / "report.txt"
            path.write_text(render_report_table(report), encoding="utf-8")
            written.append(path)
        return written
    except OSError as exc:
        raise OutputUnwritable(str(exc)) from exc


def score_transcripts(transcripts_dir: Union[str, Path]) -> RunReport:
    """Rebuild a RunReport from persisted transcripts (one trial per trial_* dir)."""
    root = Path(transcripts_dir)
    trial_dirs = sorted(d for d in root.glob("trial_*") if d.is_dir())
    if not trial_dirs:
        trial_dirs = [root]
    trials: list[TrialReport] = []
    all_transcripts: list[Transcript] = []
    ledger = UsageLedger()
    for index, trial_dir in enumerate(trial_dirs):
        rows: list[CaseRow] = []
        for path in sorted(trial_dir.glob("*.json")):
            transcript = Transcript.load(path)
            all_transcripts.append(transcript)
            ledger = ledger.merged(UsageLedger.from_transcript(transcript))
            verdict = transcript.verdict()
            gold = transcript.case_meta.get("gold_answer")
            subset = transcript.case_meta.get("subset", "closed")
            if verdict is None:
                rows.append(
                    CaseRow(case_id=transcript.case_id, subset=subset, answered=False, gold=gold)
                )
            else:
                rows.append(
                    CaseRow(
                        case_id=transcript.case_id,
                        subset=subset,
                        answered=True,
                        answer=verdict.answer,
                        gold=gold,
                        correct=(verdict.answer == gold) if gold else None,
                        route=verdict.route_taken.value,
                    )
                )
        trials.append(TrialReport(index=index, rows=rows))
    answered = [t for t in all_transcripts if t.verdict() is not None]
    return RunReport(
        trials=trials,
        route_table=route_stats(answered),
        ledger=ledger,
        case_failures=sum(t.unanswered for t in trials),
    )


def replay_recordings(recordings_dir: Union[str, Path], output_dir: Union[str, Path]) -> RunReport:
    """Re-run recorded sessions through the engine and score the verdicts."""
    from .backend import ReplayBackend

    root = Path(recordings_dir)
    paths = sorted(root.glob("*.json"))
    if not paths:
        raise ValueError(f"no recordings in {root}")
    out_dir = Path(output_dir)
    trial_dir = out_dir / "trial_0"
    trial_dir.mkdir(parents=True, exist_ok=True)
    rows: list[CaseRow] = []
    transcripts: list[Transcript] = []
    ledger = UsageLedger()
    for path in paths:
        recording = Recording.load(path)
        record = DatasetRecord(**recording.meta["record"])
        engine = EngineConfig(**recording.meta["engine"])
        backend = ReplayBackend(recording)
        run_config = RunConfig(output_dir=str(out_dir))
        row, transcript = _run_one_case(
            record, engine, run_config, backend, trial_dir, root, engine.load_templates()
        )
        rows.append(row)
        if transcript is not None:
            transcripts.append(transcript)
            ledger = ledger.merged(UsageLedger.from_transcript(transcript))
    answered = [t for t in transcripts if t.verdict() is not None]
    return RunReport(
        trials=[TrialReport(index=0, rows=rows)],
        route_table=route_stats(answered),
        ledger=ledger,
        case_failures=sum(1 for r in rows if not r.answered),
    )
