"""Exception hierarchy for the deliberation engine."""

from __future__ import annotations


class UCAgentsError(Exception):
    """Base class for every error raised by this package."""


# ---- case / protocol errors -------------------------------------------------

class InvalidCase(UCAgentsError):
    """A MedicalCase violated its invariants."""


class PreconditionError(UCAgentsError):
    """An operation was called with arguments violating its contract."""


class ParseExhausted(UCAgentsError):
    """An agent's output never matched its grammar within the retry budget."""

    def __init__(self, role: str, last_error: str):
        super().__init__(f"{role}: output unparsable after retries ({last_error})")
        self.role = role
        self.last_error = last_error


class InquiryMismatch(UCAgentsError):
    """The leader's inquiry output did not address both critics."""


# ---- backend errors ---------------------------------------------------------

class BackendUnavailable(UCAgentsError):
    """Transport failure persisted past the retry budget."""


class ContractViolation(UCAgentsError):
    """The server returned a malformed wire response."""


class ScriptMismatch(UCAgentsError):
    """A scripted backend received a request no entry resolves."""


class ReplayDivergence(UCAgentsError):
    """A replayed request's prompt digest differs from the recording."""

    def __init__(self, position: int, detail: str = ""):
        super().__init__(f"replay diverged at call {position}" + (f": {detail}" if detail else ""))
        self.position = position


# ---- prompt / grammar errors ------------------------------------------------

class PromptError(UCAgentsError):
    """Base for template rendering problems."""


class MissingBinding(PromptError):
    def __init__(self, name: str):
        super().__init__(f"unbound placeholder {{{name}}}")
        self.name = name


class ParseError(UCAgentsError):
    """Base for output-grammar violations; always retryable."""


class MarkerMissing(ParseError):
    def __init__(self, marker: str):
        super().__init__(f"marker not found: {marker}")
        self.marker = marker


class AnswerNotALetter(ParseError):
    def __init__(self, token: str):
        super().__init__(f"answer token is not a single letter: {token!r}")
        self.token = token


class WrongArity(ParseError):
    def __init__(self, count: int):
        super().__init__(f"expected 2 inquiries, found {count}")
        self.count = count


class DuplicateExpert(ParseError):
    def __init__(self, index: int):
        super().__init__(f"expert {index} addressed more than once")
        self.index = index


class UnparsableHeader(ParseError):
    pass


# ---- metrics errors ---------------------------------------------------------

class EmptyTrajectory(UCAgentsError):
    """Entropy requested over an empty hypothesis multiset."""


class MissingGold(UCAgentsError):
    def __init__(self, case_id: str):
        super().__init__(f"no gold answer for case {case_id}")
        self.case_id = case_id


class JudgeUnavailable(UCAgentsError):
    pass


class JudgeOutputUnparsable(UCAgentsError):
    pass


# ---- harness errors ---------------------------------------------------------

class MalformedRecord(UCAgentsError):
    def __init__(self, line_number: int, reason: str):
        super().__init__(f"line {line_number}: {reason}")
        self.line_number = line_number
        self.reason = reason


class DuplicateCaseId(UCAgentsError):
    def __init__(self, case_id: str):
        super().__init__(f"duplicate case_id: {case_id}")
        self.case_id = case_id


class OutputUnwritable(UCAgentsError):
    pass
