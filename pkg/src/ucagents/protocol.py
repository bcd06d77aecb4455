"""Three-tier deliberation state machine for a single case.

Tier-1: two independently prompted experts (no shared context) produce
hypotheses; disagreement routes the case straight to the Tier-3 audit,
agreement routes it to the Tier-2 supervisor. Tier-2 either finalizes the
consensus or escalates with its alternative. Tier-3 runs one risk report
per candidate, one leader inquiry (a single question per critic), one
response per critic, and a final arbitration. No agent ever revises its
stance; information flows forward only.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import prompts
from .backend import ChatBackend, ChatMessage, ChatRequest, ImagePart, TextPart, request_digest
from .errors import (
    InquiryMismatch,
    ParseError,
    ParseExhausted,
    PreconditionError,
    UCAgentsError,
)
from .metrics import UsageLedger
from .prompts import TemplateSet
from .transcript import ModelCallEvent, ParseOutcomeEvent, RoutingEvent, Transcript, VerdictEvent
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


@dataclass
class EngineConfig:
    model_id: str = "default"
    tier1_temperature: float = 0.7
    tier2_temperature: float = 0.5
    tier3_critic_temperature: float = 0.5
    tier3_inquiry_temperature: float = 0.1
    # arbitration reuses the low-variance inquiry temperature unless overridden
    tier3_arbitration_temperature: Optional[float] = None
    max_parse_retries: int = 2
    max_output_tokens: Optional[int] = None
    parallel_within_case: bool = False
    default_medical_field: str = "medical"
    imaging_modalities: str = "X-ray, CT, MRI, and pathology imaging"
    imaging_type: str = "medical"
    template_dir: Optional[str] = None

    @property
    def arbitration_temperature(self) -> float:
        if self.tier3_arbitration_temperature is not None:
            return self.tier3_arbitration_temperature
        return self.tier3_inquiry_temperature

    def load_templates(self) -> TemplateSet:
        if self.template_dir:
            return TemplateSet.from_dir(self.template_dir)
        return TemplateSet.bundled()


# ---- prompt assembly ---------------------------------------------------------

def format_case_block(case: MedicalCase) -> str:
    lines = [case.question]
    lines.extend(f"{letter}. {text}" for letter, text in case.options)
    return "\n".join(lines)


def _case_bindings(case: MedicalCase, config: EngineConfig) -> dict[str, str]:
    return {
        "MEDICAL CASE": format_case_block(case),
        "MEDICAL FIELD": case.field_hint or config.default_medical_field,
        "IMAGING MODALITIES": config.imaging_modalities,
        "IMAGING TYPE": config.imaging_type,
    }


def _user_message(case: MedicalCase, prompt_text: str) -> ChatMessage:
    # text-only cases simply omit the image part; routing logic is unchanged
    if case.image is None:
        return ChatMessage("user", prompt_text)
    return ChatMessage(
        "user",
        (TextPart(prompt_text), ImagePart(case.image.data, case.image.media_type)),
    )


_REPORT_LABELS = {
    Role.TIER1_EXPERT_1: "Expert 1 (initial diagnosis)",
    Role.TIER1_EXPERT_2: "Expert 2 (initial diagnosis)",
    Role.TIER2_SUPERVISOR: "Supervisor (consensus review)",
}


def _tier1_report_block(r1: AgentReport, r2: AgentReport) -> str:
    return f"Expert 1 report: {r1.raw_text}\nExpert 2 report: {r2.raw_text}"


def aggregated_report(reports: list[AgentReport]) -> str:
    """All reports generated before Tier-3, verbatim, in generation order."""
    return "\n".join(f"[{_REPORT_LABELS[r.role]}] {r.raw_text}" for r in reports)


def _risk_report_block(risks: list[RiskReport]) -> str:
    return "\n".join(
        f"[Critic {r.critic_index}, reviews {r.target_hypothesis}] {r.raw_text}" for r in risks
    )


def _response_block(responses: list[InquiryResponse], risks: list[RiskReport]) -> str:
    targets = {r.critic_index: r.target_hypothesis for r in risks}
    return "\n".join(
        f"[Expert {resp.critic_index}, reviews {targets[resp.critic_index]}] {resp.response}"
        for resp in responses
    )


# ---- call machinery ----------------------------------------------------------

class _ReviewTargetMismatch(ParseError):
    pass


def _call_and_parse(
    backend: ChatBackend,
    config: EngineConfig,
    role: Role,
    grammar: str,
    messages: list[ChatMessage],
    temperature: float,
    parse_fn: Callable[[str], tuple[object, dict]],
    sink: list,
):
    """One logical agent turn: call, parse, retry with corrective instruction.

    Every attempt is its own ModelCall event followed by its ParseOutcome.
    Raises ParseExhausted (or a step-specific error upstream) once the retry
    budget is spent.
    """
    convo = list(messages)
    last_err: Optional[ParseError] = None
    for attempt in range(config.max_parse_retries + 1):
        request = ChatRequest(
            messages=tuple(convo),
            temperature=temperature,
            model_id=config.model_id,
            max_output_tokens=config.max_output_tokens,
        )
        start = time.perf_counter()
        response = backend.complete(request)
        wall = time.perf_counter() - start
        sink.append(
            ModelCallEvent(
                role=role,
                request_digest=request_digest(request),
                response_text=response.text,
                input_tokens=response.usage.input_tokens,
                output_tokens=response.usage.output_tokens,
                usage_estimated=response.usage.estimated,
                temperature=temperature,
                wall_time_s=wall,
                retry_index=attempt,
            )
        )
        try:
            value, fields = parse_fn(response.text)
        except ParseError as err:
            sink.append(ParseOutcomeEvent(role=role, success=False, fields={}, error=str(err)))
            last_err = err
            convo = convo + [
                ChatMessage("assistant", response.text),
                ChatMessage("user", prompts.corrective_instruction(grammar)),
            ]
            continue
        sink.append(ParseOutcomeEvent(role=role, success=True, fields=fields))
        return value, response.text
    raise ParseExhausted(role.value, str(last_err))


def _run_pair(task_a: Callable[[list], object], task_b: Callable[[list], object], parallel: bool):
    """Run two independent agent turns, merging their events deterministically.

    Events are buffered per task and appended in index order regardless of
    completion order, keeping transcripts byte-stable.
    """
    buf_a: list = []
    buf_b: list = []

    def _guard(task, buf):
        try:
            return task(buf), None
        except Exception as exc:  # noqa: BLE001 - re-raised after merging events
            return None, exc

    if parallel:
        with ThreadPoolExecutor(max_workers=2) as pool:
            fut_a = pool.submit(_guard, task_a, buf_a)
            fut_b = pool.submit(_guard, task_b, buf_b)
            result_a, err_a = fut_a.result()
            result_b, err_b = fut_b.result()
    else:
        result_a, err_a = _guard(task_a, buf_a)
        result_b, err_b = _guard(task_b, buf_b)
    events = buf_a + buf_b
    if err_a is not None:
        return None, None, events, err_a
    if err_b is not None:
        return None, None, events, err_b
    return result_a, result_b, events, None


# ---- tier operations ---------------------------------------------------------

def tier1_diagnose(
    case: MedicalCase,
    config: EngineConfig,
    backend: ChatBackend,
    transcript: Optional[Transcript] = None,
    templates: Optional[TemplateSet] = None,
) -> tuple[AgentReport, AgentReport]:
    """Two identically prompted, context-isolated diagnoses at the Tier-1 temperature."""
    case.validate()
    transcript = transcript if transcript is not None else Transcript(case.case_id)
    templates = templates or config.load_templates()
    prompt_text = templates.render("tier1", _case_bindings(case, config))
    message = _user_message(case, prompt_text)

    def _parse(raw: str):
        fields = prompts.parse_report(raw, grammar="tier1")
        if fields.answer not in case.letters:
            raise _ReviewTargetMismatch(f"answer {fields.answer} not among case options")
        return fields, {"reasoning": fields.reasoning, "answer": fields.answer}

    def _task(role: Role):
        def run(buf: list) -> AgentReport:
            fields, raw = _call_and_parse(
                backend, config, role, "tier1", [message],
                config.tier1_temperature, _parse, buf,
            )
            return AgentReport(
                role=role,
                hypothesis=fields.answer,
                reasoning=fields.reasoning,
                temperature=config.tier1_temperature,
                raw_text=raw,
            )
        return run

    r1, r2, events, err = _run_pair(
        _task(Role.TIER1_EXPERT_1), _task(Role.TIER1_EXPERT_2), config.parallel_within_case
    )
    transcript.extend(events)
    if err is not None:
        raise err
    return r1, r2


def route_after_tier1(r1: AgentReport, r2: AgentReport) -> RouteDecision:
    """Pure divergence routing: disagreement escalates to the Tier-3 audit."""
    divergence = r1.hypothesis != r2.hypothesis
    if divergence:
        return RouteDecision(
            stage=Stage.AFTER_TIER1,
            destination=Destination.TIER3,
            divergence=True,
            candidates=(r1.hypothesis, r2.hypothesis),  # agent-index order, never sorted
        )
    return RouteDecision(
        stage=Stage.AFTER_TIER1,
        destination=Destination.TIER2,
        divergence=False,
        candidates=None,
    )


def tier2_review(
    case: MedicalCase,
    consensus: tuple[AgentReport, AgentReport],
    config: EngineConfig,
    backend: ChatBackend,
    transcript: Optional[Transcript] = None,
    templates: Optional[TemplateSet] = None,
) -> AgentReport:
    """Supervisor verification of a Tier-1 consensus; both reports embedded verbatim."""
    r1, r2 = consensus
    if r1.hypothesis != r2.hypothesis:
        raise PreconditionError("tier2_review requires equal Tier-1 hypotheses")
    transcript = transcript if transcript is not None else Transcript(case.case_id)
    templates = templates or config.load_templates()
    bindings = _case_bindings(case, config)
    bindings["TIER 1 REPORT"] = _tier1_report_block(r1, r2)
    prompt_text = templates.render("tier2", bindings)
    message = _user_message(case, prompt_text)

    def _parse(raw: str):
        fields = prompts.parse_report(raw, grammar="tier2")
        if fields.answer not in case.letters:
            raise _ReviewTargetMismatch(f"answer {fields.answer} not among case options")
        return fields, {"reasoning": fields.reasoning, "answer": fields.answer}

    buf: list = []
    try:
        fields, raw = _call_and_parse(
            backend, config, Role.TIER2_SUPERVISOR, "tier2", [message],
            config.tier2_temperature, _parse, buf,
        )
    finally:
        transcript.extend(buf)
    return AgentReport(
        role=Role.TIER2_SUPERVISOR,
        hypothesis=fields.answer,
        reasoning=fields.reasoning,
        temperature=config.tier2_temperature,
        raw_text=raw,
    )


def route_after_tier2(h1: str, supervisor: AgentReport) -> RouteDecision:
    """Consensus is final only when the supervisor confirms the Tier-1 letter."""
    if supervisor.hypothesis == h1:
        return RouteDecision(
            stage=Stage.AFTER_TIER2,
            destination=Destination.TERMINATE,
            divergence=False,
            candidates=None,
        )
    return RouteDecision(
        stage=Stage.AFTER_TIER2,
        destination=Destination.TIER3,
        divergence=True,
        candidates=(h1, supervisor.hypothesis),  # (Tier-1 consensus, supervisor alternative)
    )


def tier3_audit(
    case: MedicalCase,
    candidates: tuple[str, str],
    prior_reports: list[AgentReport],
    config: EngineConfig,
    backend: ChatBackend,
    transcript: Optional[Transcript] = None,
    templates: Optional[TemplateSet] = None,
) -> tuple[Verdict, list[RiskReport], list[Inquiry], list[InquiryResponse]]:
    """Adversarial audit: two risk reports, one inquiry round, final arbitration.

    Always exactly 6 model calls excluding parse retries.
    """
    h_a, h_b = candidates
    if h_a == h_b:
        raise PreconditionError("tier3_audit requires two distinct candidate hypotheses")
    transcript = transcript if transcript is not None else Transcript(case.case_id)
    templates = templates or config.load_templates()
    route = Route.T1_T3 if len(prior_reports) == 2 else Route.T1_T2_T3
    base_bindings = _case_bindings(case, config)
    aggregated = aggregated_report(prior_reports)

    # Step 1: one critic per candidate, never both
    def _critic_parse(raw: str):
        fields = prompts.parse_critic_report(raw)
        return fields, {"flaws": fields.flaws, "counter_evidence": fields.counter_evidence}

    critic_prompts = {}
    for index, target in ((1, h_a), (2, h_b)):
        bindings = dict(base_bindings)
        bindings["OPTION"] = target
        bindings["AGGREGATED REPORT"] = aggregated
        critic_prompts[index] = templates.render("critic", bindings)

    def _critic_task(index: int, target: str, role: Role):
        message = _user_message(case, critic_prompts[index])

        def run(buf: list) -> RiskReport:
            fields, raw = _call_and_parse(
                backend, config, role, "critic", [message],
                config.tier3_critic_temperature, _critic_parse, buf,
            )
            return RiskReport(
                critic_index=index,
                target_hypothesis=target,
                flaws=fields.flaws,
                counter_evidence=fields.counter_evidence,
                raw_text=raw,
            )
        return run

    risk_1, risk_2, events, err = _run_pair(
        _critic_task(1, h_a, Role.CRITIC_1),
        _critic_task(2, h_b, Role.CRITIC_2),
        config.parallel_within_case,
    )
    transcript.extend(events)
    if err is not None:
        raise err
    risks = [risk_1, risk_2]

    # Step 2: one leader call parsed into exactly two inquiries
    inquiry_bindings = dict(base_bindings)
    inquiry_bindings["AGGREGATED REPORT"] = aggregated
    inquiry_bindings["RISK REPORT"] = _risk_report_block(risks)
    inquiry_prompt = templates.render("leader_inquiry", inquiry_bindings)
    inquiry_message = _user_message(case, inquiry_prompt)
    expected_targets = {1: h_a, 2: h_b}

    def _inquiry_parse(raw: str):
        parsed = prompts.parse_inquiries(raw)
        for q in parsed:
            if q.reviewed_option != expected_targets[q.addressed_to]:
                raise _ReviewTargetMismatch(
                    f"expert {q.addressed_to} reviews {expected_targets[q.addressed_to]}, "
                    f"inquiry says {q.reviewed_option}"
                )
        return parsed, {
            "inquiries": [
                {"expert": q.addressed_to, "reviews": q.reviewed_option, "question": q.question}
                for q in parsed
            ]
        }

    buf = []
    try:
        inquiries, inquiry_raw = _call_and_parse(
            backend, config, Role.LEADER, "leader_inquiry", [inquiry_message],
            config.tier3_inquiry_temperature, _inquiry_parse, buf,
        )
    except ParseExhausted as exc:
        transcript.extend(buf)
        raise InquiryMismatch(str(exc)) from exc
    transcript.extend(buf)
    by_index = {q.addressed_to: q for q in inquiries}

    # Step 3: each critic answers its inquiry within its own conversation
    def _response_parse(raw: str):
        text = prompts.parse_critic_response(raw)
        return text, {"response": text}

    def _response_task(index: int, role: Role, risk: RiskReport):
        bindings = {"INQUIRY": by_index[index].question}
        follow_up = templates.render("critic_response", bindings)
        convo = [
            _user_message(case, critic_prompts[index]),
            ChatMessage("assistant", risk.raw_text),
            ChatMessage("user", follow_up),
        ]

        def run(buf: list) -> InquiryResponse:
            text, _raw = _call_and_parse(
                backend, config, role, "critic_response", convo,
                config.tier3_inquiry_temperature, _response_parse, buf,
            )
            return InquiryResponse(critic_index=index, response=text)
        return run

    resp_1, resp_2, events, err = _run_pair(
        _response_task(1, Role.CRITIC_1, risk_1),
        _response_task(2, Role.CRITIC_2, risk_2),
        config.parallel_within_case,
    )
    transcript.extend(events)
    if err is not None:
        raise err
    responses = [resp_1, resp_2]

    # Step 4: arbitration continues the leader's conversation (image included
    # via the first user message)
    verdict_bindings = {"RESPONSE": _response_block(responses, risks)}
    verdict_prompt = templates.render("leader_verdict", verdict_bindings)
    arbitration_convo = [
        inquiry_message,
        ChatMessage("assistant", inquiry_raw),
        ChatMessage("user", verdict_prompt),
    ]

    def _verdict_parse(raw: str):
        fields = prompts.parse_leader_verdict(raw)
        if fields.final_answer not in case.letters:
            raise _ReviewTargetMismatch(
                f"final answer {fields.final_answer} not among case options"
            )
        return fields, {
            "final_reasoning": fields.final_reasoning,
            "final_answer": fields.final_answer,
        }

    buf = []
    try:
        fields, _raw = _call_and_parse(
            backend, config, Role.LEADER, "leader_verdict", arbitration_convo,
            config.arbitration_temperature, _verdict_parse, buf,
        )
    finally:
        transcript.extend(buf)
    verdict = Verdict(
        answer=fields.final_answer,
        final_reasoning=fields.final_reasoning,
        route_taken=route,
        chose_outside_candidates=fields.final_answer not in {h_a, h_b},
    )
    transcript.add(VerdictEvent(verdict))
    return verdict, risks, list(inquiries), responses


# ---- end-to-end --------------------------------------------------------------

def run_case(
    case: MedicalCase,
    config: EngineConfig,
    backend: ChatBackend,
    templates: Optional[TemplateSet] = None,
) -> tuple[Verdict, Transcript, UsageLedger]:
    """Execute the full protocol for one case.

    Model-call counts excluding parse retries: 3 on T1_T2, 8 on T1_T3,
    9 on T1_T2_T3.
    """
    case.validate()
    templates = templates or config.load_templates()
    meta = {"gold_answer": case.gold_answer, "question": case.question}
    transcript = Transcript(case.case_id, case_meta=meta)
    try:
        return _run_case_inner(case, config, backend, templates, transcript)
    except UCAgentsError as exc:
        # attach the partial transcript so callers can persist it
        exc.transcript = transcript
        raise


def _run_case_inner(
    case: MedicalCase,
    config: EngineConfig,
    backend: ChatBackend,
    templates: TemplateSet,
    transcript: Transcript,
) -> tuple[Verdict, Transcript, UsageLedger]:
    r1, r2 = tier1_diagnose(case, config, backend, transcript, templates)
    decision = route_after_tier1(r1, r2)
    transcript.add(RoutingEvent(decision))
    prior = [r1, r2]

    if decision.destination is Destination.TIER2:
        supervisor = tier2_review(case, (r1, r2), config, backend, transcript, templates)
        prior.append(supervisor)
        decision2 = route_after_tier2(r1.hypothesis, supervisor)
        transcript.add(RoutingEvent(decision2))
        if decision2.destination is Destination.TERMINATE:
            verdict = Verdict(
                answer=r1.hypothesis,
                final_reasoning=supervisor.reasoning,
                route_taken=Route.T1_T2,
                chose_outside_candidates=False,
            )
            transcript.add(VerdictEvent(verdict))
            return verdict, transcript, UsageLedger.from_transcript(transcript)
        candidates = decision2.candidates
    else:
        candidates = decision.candidates

    verdict, _risks, _inquiries, _responses = tier3_audit(
        case, candidates, prior, config, backend, transcript, templates
    )
    return verdict, transcript, UsageLedger.from_transcript(transcript)
