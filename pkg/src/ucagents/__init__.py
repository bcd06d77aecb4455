"""Model-agnostic three-tier deliberation engine for medical VQA.

Two independent diagnoses, divergence routing, supervisory consensus
verification, and an adversarial audit with a one-round leader inquiry,
over pluggable chat backends, with auditable transcripts and cost ledgers.
"""

from .backend import (
    ChatMessage,
    ChatRequest,
    ChatResponse,
    HTTPBackend,
    HTTPBackendConfig,
    Recording,
    RecordingBackend,
    ReplayBackend,
    ScriptedBackend,
    ScriptEntry,
    record_session,
    replay_session,
)
from .harness import DatasetRecord, RunConfig, RunReport, emit_report, ingest, run_benchmark
from .metrics import (
    PriceTable,
    UsageLedger,
    judge_evidence_coverage,
    judge_noise_ratio,
    ledger_from_transcript,
    route_stats,
    trajectory_entropy,
)
from .prompts import TemplateSet
from .protocol import (
    EngineConfig,
    route_after_tier1,
    route_after_tier2,
    run_case,
    tier1_diagnose,
    tier2_review,
    tier3_audit,
)
from .transcript import Transcript
from .types import (
    AgentReport,
    Destination,
    Inquiry,
    InquiryResponse,
    MedicalCase,
    RiskReport,
    Role,
    Route,
    RouteDecision,
    Stage,
    Verdict,
)

__version__ = "0.1.0"

__all__ = [
    "AgentReport",
    "ChatMessage",
    "ChatRequest",
    "ChatResponse",
    "DatasetRecord",
    "Destination",
    "EngineConfig",
    "HTTPBackend",
    "HTTPBackendConfig",
    "Inquiry",
    "InquiryResponse",
    "MedicalCase",
    "PriceTable",
    "Recording",
    "RecordingBackend",
    "ReplayBackend",
    "RiskReport",
    "Role",
    "Route",
    "RouteDecision",
    "RunConfig",
    "RunReport",
    "ScriptEntry",
    "ScriptedBackend",
    "Stage",
    "TemplateSet",
    "Transcript",
    "UsageLedger",
    "Verdict",
    "emit_report",
    "ingest",
    "judge_evidence_coverage",
    "judge_noise_ratio",
    "ledger_from_transcript",
    "record_session",
    "replay_session",
    "route_after_tier1",
    "route_after_tier2",
    "route_stats",
    "run_benchmark",
    "run_case",
    "tier1_diagnose",
    "tier2_review",
    "tier3_audit",
    "trajectory_entropy",
]
