"""Prompt rendering, chat-backend abstraction and structured-output validation.

The gateway renders one prompt per criteria kind, calls a pluggable chat
backend, extracts the payload from the first triple-backtick fence, validates
it against the strict criterion-output JSON schema and retries the whole
generation up to ``max_attempts`` times with identical messages. Each failure
class (transport, extraction, parse, schema, kind) is distinguishable so retry
diagnostics stay precise.

Credentials are read from the BACKEND_API_KEY environment variable only,
never from command lines.
"""

from __future__ import annotations

import json
import os
import re
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from pathlib import Path

import jsonschema
import requests

from .model import ALLOWED_LABELS, ClinicalTrial, CriterionAssessment, CriterionKind, EligibilityLabel, PatientNote

ROLES = frozenset({"system", "user", "assistant"})

INCLUSION_SYSTEM_PROMPT = (
    "You are an assistant tasked with assessing patient eligibility for clinical trials. "
    "Your role involves comparing patient notes with the trial's inclusion criteria, which "
    "vary in format and include specifics like age, gender, disease specifics, and medical "
    "history. Your responsibilities include:\n"
    "1. Interpreting medical terminology and context in both patient notes and trial criteria.\n"
    "2. Explaining the relevance of each inclusion criterion in the patient note, step-by-step.\n"
    "3. Annotating relevant sentences from the patient note which are relevant for that "
    "criterion or indicating a lack of relevant information.\n"
    "4. Labeling each criterion as 'included', 'not included', or 'no relevant information' "
    "based on the patient's eligibility for that criterion.\n"
    "5. Addressing ambiguities or gaps in patient notes carefully.\n"
    '6. Producing a JSON output with the exact format: {"inclusion_criterion": '
    '["relevance_explanation", [sentence_id], "eligibility_status"]} and ensuring its '
    "structural accuracy."
)

EXCLUSION_SYSTEM_PROMPT = (
    "You are an assistant tasked with assessing patient eligibility for clinical trials. "
    "Your role involves comparing patient notes with the trial's exclusion criteria, which "
    "vary in format and include specifics like age, gender, disease specifics, and medical "
    "history. Your responsibilities include:\n"
    "1. Interpreting medical terminology and context in both patient notes and trial criteria.\n"
    "2. Explaining the relevance of each exclusion criterion in the patient note, step-by-step.\n"
    "3. Annotating relevant sentences from the patient note which are relevant for that "
    "criterion or indicating a lack of relevant information.\n"
    "4. Labeling each criterion as 'excluded', 'not excluded', or 'no relevant information' "
    "based on the patient's eligibility.\n"
    "5. Addressing ambiguities or gaps in patient notes carefully.\n"
    '6. Producing a JSON output with the exact format: {"exclusion_criterion": '
    '["relevance_explanation", [sentence_id], "eligibility_status"]} and ensuring its '
    "structural accuracy."
)

ASSISTANT_PRIMER = "```json```"

# Strict shape for criterion outputs: every key maps to exactly
# [explanation, [sentence ids], label], with at most 20 evidence ids and the
# five-label enum. Empty keys are the only possible additional property and
# are rejected.
OUTPUT_SCHEMA: dict = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "patternProperties": {
        "^.+$": {
            "type": "array",
            "items": [
                {"type": "string"},
                {
                    "type": "array",
                    "items": {"type": "integer"},
                    "minItems": 0,
                    "maxItems": 20,
                },
                {
                    "type": "string",
                    "enum": [
                        "included",
                        "not included",
                        "excluded",
                        "not excluded",
                        "no relevant information",
                    ],
                },
            ],
            "minItems": 3,
            "maxItems": 3,
        }
    },
    "additionalProperties": False,
}

_VALIDATOR = jsonschema.Draft7Validator(OUTPUT_SCHEMA)


class GatewayError(Exception):
    """Base class for gateway failures."""


class BackendError(GatewayError):
    """Transport-level backend failure; consumes one retry attempt."""


class ExtractionError(GatewayError):
    """No triple-backtick fence and the raw text is not a bare JSON object."""


class PayloadParseError(GatewayError):
    """Extracted payload is not valid JSON."""


class SchemaViolation(GatewayError):
    """Payload parsed but violates the output schema."""

    def __init__(self, message: str, key: str | None = None, constraint: str | None = None):
        super().__init__(message)
        self.key = key
        self.constraint = constraint


class KindViolation(GatewayError):
    """A criterion carries a label that is illegal for the requested kind."""

    def __init__(self, key: str, label: str, kind: CriterionKind):
        super().__init__(f"label {label!r} is illegal for {kind.value} criterion {key!r}")
        self.key = key
        self.label = label
        self.kind = kind


class StructuredOutputFailure(GatewayError):
    """All retry attempts exhausted without a schema-valid output."""

    def __init__(self, attempts: int, last_raw: str | None, last_error: GatewayError | None):
        super().__init__(
            f"no schema-valid output after {attempts} attempts "
            f"(last error: {last_error})"
        )
        self.attempts = attempts
        self.last_raw = last_raw
        self.last_error = last_error


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {sorted(ROLES)}, got {self.role!r}")

    def to_dict(self) -> dict:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class GenerationConfig:
    """Sampling and retry settings for one generation.

    ``temperature=None`` defers to the backend's default (0.0 for
    deterministic API-style backends, typically 0.4 for open-weight chat
    backends). ``include_exemplar`` appends the assistant fence primer used
    to prime base models; fine-tuned models omit it.
    """

    temperature: float | None = None
    top_p: float = 0.95
    max_attempts: int = 5
    include_exemplar: bool = True
    exemplar_exchange: tuple[str, str] | None = None

    def __post_init__(self) -> None:
        if self.temperature is not None and self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")

    def to_dict(self) -> dict:
        return {
            "temperature": self.temperature,
            "top_p": self.top_p,
            "max_attempts": self.max_attempts,
            "include_exemplar": self.include_exemplar,
            "exemplar_exchange": list(self.exemplar_exchange) if self.exemplar_exchange else None,
        }


class BackendPort(ABC):
    """A chat backend: turns a message list into raw text.

    Implementations must tolerate concurrent ``generate`` calls; the gateway
    itself is stateless per call.
    """

    name: str = "backend"
    default_temperature: float = 0.0

    @abstractmethod
    def generate(self, messages: list[ChatMessage], config: GenerationConfig) -> str:
        """Return the raw model text for the given messages."""

    def effective_temperature(self, config: GenerationConfig) -> float:
        return config.temperature if config.temperature is not None else self.default_temperature


class SequenceBackend(BackendPort):
    """In-memory backend serving a fixed response sequence; counts calls.

    Entries may be strings (returned) or exceptions (raised as transport
    failures), which makes retry behaviour directly scriptable in tests.
    """

    def __init__(self, responses: list[str | Exception], name: str = "mock"):
        self.responses = list(responses)
        self.name = name
        self.calls = 0
        self._lock = threading.Lock()

    def generate(self, messages: list[ChatMessage], config: GenerationConfig) -> str:
        with self._lock:
            index = self.calls
            self.calls += 1
        if index >= len(self.responses):
            raise BackendError(f"{self.name}: response sequence exhausted after {index} calls")
        entry = self.responses[index]
        if isinstance(entry, Exception):
            raise BackendError(str(entry))
        return entry


class ScriptedBackend(BackendPort):
    """Offline backend that replays a scripted responses file.

    The script is JSON-lines of {"match": {"patient_id", "trial_id", "kind"},
    "response": str}. Because the port only sees messages, each script entry
    is resolved to the exact user-message text its pair would render, and
    lookups happen by that text. Repeated entries for one match are served in
    file order, the last one repeating, so retry sequences are scriptable.
    """

    name = "mock"

    def __init__(self, responses_by_user_message: dict[str, list[str]]):
        self._responses = {k: list(v) for k, v in responses_by_user_message.items()}
        self._served: dict[str, int] = {}
        self._lock = threading.Lock()
        self.calls = 0

    @classmethod
    def load(cls, script_path: str | Path, corpus) -> "ScriptedBackend":
        by_message: dict[str, list[str]] = {}
        patients = corpus.patients_by_id()
        trials = corpus.trials_by_id()
        with open(script_path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    entry = json.loads(line)
                    match = entry["match"]
                    note = patients[match["patient_id"]]
                    trial = trials[match["trial_id"]]
                    kind = CriterionKind.from_string(match["kind"])
                    response = entry["response"]
                except (json.JSONDecodeError, KeyError, ValueError) as exc:
                    raise ValueError(f"{script_path}:{lineno}: bad script entry ({exc})") from exc
                messages = render_prompt(note, trial, kind, GenerationConfig())
                if messages is None:
                    raise ValueError(
                        f"{script_path}:{lineno}: scripted pair has no "
                        f"{kind.value} criteria to assess"
                    )
                user = next(m.content for m in messages if m.role == "user")
                by_message.setdefault(user, []).append(response)
        return cls(by_message)

    def generate(self, messages: list[ChatMessage], config: GenerationConfig) -> str:
        user = next((m.content for m in messages if m.role == "user"), None)
        with self._lock:
            self.calls += 1
            if user is None or user not in self._responses:
                raise BackendError("no scripted response for this prompt")
            queue = self._responses[user]
            index = min(self._served.get(user, 0), len(queue) - 1)
            self._served[user] = index + 1
            return queue[index]


class HttpChatBackend(BackendPort):
    """Generic chat-completions backend over an OpenAI-style HTTP endpoint.

    The API key is read from BACKEND_API_KEY at call time and never logged.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        name: str | None = None,
        default_temperature: float = 0.0,
        timeout: float = 120.0,
        api_key_env: str = "BACKEND_API_KEY",
    ):
        self.endpoint = endpoint
        self.model = model
        self.name = name or model
        self.default_temperature = default_temperature
        self.timeout = timeout
        self.api_key_env = api_key_env

    def generate(self, messages: list[ChatMessage], config: GenerationConfig) -> str:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        body = {
            "model": self.model,
            "messages": [m.to_dict() for m in messages],
            "temperature": self.effective_temperature(config),
            "top_p": config.top_p,
        }
        try:
            resp = requests.post(self.endpoint, json=body, headers=headers, timeout=self.timeout)
            resp.raise_for_status()
            payload = resp.json()
            return payload["choices"][0]["message"]["content"]
        except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
            raise BackendError(f"{self.name}: {exc}") from exc


def _numbered_note(note: PatientNote) -> str:
    return "\n".join(f"{i}. {sentence}" for i, sentence in enumerate(note.sentences))


def render_prompt(
    note: PatientNote,
    trial: ClinicalTrial,
    kind: CriterionKind,
    config: GenerationConfig,
) -> list[ChatMessage] | None:
    """Render the per-kind prompt, or None when the trial has no such criteria.

    The user message interpolates the numbered note sentences plus the
    trial's title, summary, target diseases, interventions and the requested
    criteria block. With ``include_exemplar`` a trailing assistant fence
    primer is appended (plus an optional user-supplied exemplar exchange
    before it).
    """
    criteria = trial.criteria_text(kind)
    if not criteria.strip():
        return None
    if kind is CriterionKind.INCLUSION:
        system = INCLUSION_SYSTEM_PROMPT
        criteria_heading = "Inclusion Criteria"
    else:
        system = EXCLUSION_SYSTEM_PROMPT
        criteria_heading = "Exclusion Criteria"
    user = (
        f"Here is the patient note - {_numbered_note(note)}. "
        f"Here is the clinical trial - Title - {trial.title} \n "
        f"Summary - {trial.summary}\n "
        f"Target disease - {', '.join(trial.target_diseases)}\n "
        f"Interventions - {', '.join(trial.interventions)} \n "
        f"{criteria_heading} - {criteria}"
    )
    messages = [ChatMessage("system", system), ChatMessage("user", user)]
    if config.include_exemplar:
        if config.exemplar_exchange is not None:
            exemplar_user, exemplar_assistant = config.exemplar_exchange
            messages.append(ChatMessage("user", exemplar_user))
            messages.append(ChatMessage("assistant", exemplar_assistant))
        messages.append(ChatMessage("assistant", ASSISTANT_PRIMER))
    return messages


_FENCE = re.compile(r"```(?:json)?(.*?)```", re.DOTALL)


def extract_fenced_payload(raw: str) -> str:
    """Return the content of the first triple-backtick fence.

    An optional "json" tag after the opening fence is stripped. When no fence
    exists but the whole string already parses as a JSON object, the string is
    returned unchanged.
    """
    match = _FENCE.search(raw)
    if match:
        return match.group(1).strip()
    try:
        if isinstance(json.loads(raw), dict):
            return raw
    except json.JSONDecodeError:
        pass
    raise ExtractionError("no triple-backtick fence and not a bare JSON object")


def validate_payload(payload: str, kind: CriterionKind) -> dict[str, CriterionAssessment]:
    """Parse and validate a payload; return one assessment per criterion key.

    Raises PayloadParseError, SchemaViolation or KindViolation, in that order
    of checking, so retry diagnostics name the failing stage.
    """
    try:
        data = json.loads(payload)
    except json.JSONDecodeError as exc:
        raise PayloadParseError(f"payload is not valid JSON: {exc}") from exc
    error = jsonschema.exceptions.best_match(_VALIDATOR.iter_errors(data))
    if error is not None:
        key = str(error.absolute_path[0]) if error.absolute_path else None
        raise SchemaViolation(
            f"schema violation at {list(error.absolute_path) or '<root>'}: {error.message}",
            key=key,
            constraint=error.validator,
        )
    allowed = ALLOWED_LABELS[kind]
    assessments: dict[str, CriterionAssessment] = {}
    for key, (explanation, evidence_ids, label_str) in data.items():
        label = EligibilityLabel(label_str)
        if label not in allowed:
            raise KindViolation(key, label_str, kind)
        assessment = CriterionAssessment(
            criterion_text=key,
            kind=kind,
            explanation=explanation,
            evidence_ids=tuple(evidence_ids),
            label=label,
        )
        assessments[assessment.criterion_text] = assessment
    return assessments


def serialize_assessments(assessments: dict[str, CriterionAssessment]) -> str:
    """Serialize assessments back to the schema-shaped JSON object.

    The result always re-validates for the assessments' kind (validation
    idempotence), which makes it the canonical payload for exports.
    """
    data = {
        a.criterion_text: [a.explanation, list(a.evidence_ids), a.label.value]
        for a in assessments.values()
    }
    return json.dumps(data, ensure_ascii=False)


class TranscriptJournal:
    """Append-only JSON-lines audit log of messages, raw responses and attempts."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def record(self, entry: dict) -> None:
        line = json.dumps(entry, ensure_ascii=False, sort_keys=True)
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(line + "\n")


def generate_validated(
    backend: BackendPort,
    messages: list[ChatMessage],
    kind: CriterionKind,
    config: GenerationConfig,
    journal: TranscriptJournal | None = None,
    tag: dict | None = None,
) -> tuple[dict[str, CriterionAssessment], int]:
    """Call the backend until extraction+validation succeed, bounded by retries.

    Every retry reuses identical messages and config. Transport errors consume
    attempts like validation failures. Raises StructuredOutputFailure after
    ``config.max_attempts`` failed attempts.
    """
    last_raw: str | None = None
    last_error: GatewayError | None = None
    for attempt in range(1, config.max_attempts + 1):
        raw: str | None = None
        try:
            raw = backend.generate(messages, config)
            last_raw = raw
            payload = extract_fenced_payload(raw)
            assessments = validate_payload(payload, kind)
        except GatewayError as exc:
            last_error = exc
            if journal is not None:
                journal.record(
                    {
                        "tag": tag or {},
                        "backend": backend.name,
                        "attempt": attempt,
                        "messages": [m.to_dict() for m in messages],
                        "response": raw,
                        "outcome": type(exc).__name__,
                        "error": str(exc),
                    }
                )
            continue
        if journal is not None:
            journal.record(
                {
                    "tag": tag or {},
                    "backend": backend.name,
                    "attempt": attempt,
                    "messages": [m.to_dict() for m in messages],
                    "response": raw,
                    "outcome": "ok",
                }
            )
        return assessments, attempt
    raise StructuredOutputFailure(config.max_attempts, last_raw, last_error)


def make_config_for_backend(backend: BackendPort, config: GenerationConfig) -> GenerationConfig:
    """Resolve a config's unset temperature against the backend default."""
    if config.temperature is None:
        return replace(config, temperature=backend.default_temperature)
    return config
