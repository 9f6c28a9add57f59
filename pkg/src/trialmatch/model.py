"""Core domain types: patients, trials, labels, assessments and annotations.

All types are immutable value objects. Constructors enforce only structural
invariants (non-empty sentence lists, homogeneous criterion kinds); semantic
checks that an operation is expected to *report* rather than prevent (evidence
bounds, label/kind agreement) live in ``validate_assessment``.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone


class EligibilityLabel(enum.Enum):
    """The five per-criterion eligibility verdicts."""

    INCLUDED = "included"
    NOT_INCLUDED = "not included"
    EXCLUDED = "excluded"
    NOT_EXCLUDED = "not excluded"
    NO_RELEVANT_INFORMATION = "no relevant information"

    @classmethod
    def from_string(cls, raw: str) -> "EligibilityLabel":
        try:
            return cls(raw)
        except ValueError:
            raise ValueError(f"unknown eligibility label: {raw!r}") from None


class CriterionKind(enum.Enum):
    INCLUSION = "inclusion"
    EXCLUSION = "exclusion"

    @classmethod
    def from_string(cls, raw: str) -> "CriterionKind":
        try:
            return cls(raw)
        except ValueError:
            raise ValueError(f"unknown criterion kind: {raw!r}") from None


# An inclusion criterion may only be judged included / not included / no
# relevant information; an exclusion criterion excluded / not excluded / no
# relevant information.
ALLOWED_LABELS: dict[CriterionKind, frozenset[EligibilityLabel]] = {
    CriterionKind.INCLUSION: frozenset(
        {
            EligibilityLabel.INCLUDED,
            EligibilityLabel.NOT_INCLUDED,
            EligibilityLabel.NO_RELEVANT_INFORMATION,
        }
    ),
    CriterionKind.EXCLUSION: frozenset(
        {
            EligibilityLabel.EXCLUDED,
            EligibilityLabel.NOT_EXCLUDED,
            EligibilityLabel.NO_RELEVANT_INFORMATION,
        }
    ),
}

MAX_EVIDENCE_IDS = 20


class Relevance(enum.IntEnum):
    """Graded relevance of a trial for a patient."""

    IRRELEVANT = 0
    EXCLUDED = 1
    ELIGIBLE = 2


class ReasoningMode(enum.Enum):
    """Whether the note states the needed fact directly or only by inference."""

    EXPLICIT = "explicit"
    IMPLICIT = "implicit"


class ErrorType(enum.Enum):
    """Annotation vocabulary for judged model errors."""

    IMPLICIT_FAILURE = "implicit_failure"
    LACK_OF_INFORMATION = "lack_of_information"
    WRONG_OUTCOME = "wrong_outcome"
    EXPLANATION_OUTPUT_MISMATCH = "explanation_output_mismatch"
    EXPERT_OPINION_NEEDED = "expert_opinion_needed"
    NEGATED_CRITERIA = "negated_criteria"


@dataclass(frozen=True)
class PatientNote:
    """An identified patient summary as an ordered list of sentences.

    Sentences are indexed from 0; evidence references point at these indices.
    """

    patient_id: str
    sentences: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.patient_id:
            raise ValueError("patient_id must be non-empty")
        if not self.sentences:
            raise ValueError(f"patient {self.patient_id}: sentences must be non-empty")
        object.__setattr__(self, "sentences", tuple(self.sentences))

    def to_dict(self) -> dict:
        return {"patient_id": self.patient_id, "sentences": list(self.sentences)}

    @classmethod
    def from_dict(cls, d: dict) -> "PatientNote":
        return cls(patient_id=d["patient_id"], sentences=tuple(d["sentences"]))


@dataclass(frozen=True)
class ClinicalTrial:
    """Trial metadata plus raw inclusion and exclusion criteria blocks.

    Either criteria block may be empty; trials without stated criteria are
    legal inputs and simply contribute nothing for that kind.
    """

    trial_id: str
    title: str
    summary: str
    target_diseases: tuple[str, ...]
    interventions: tuple[str, ...]
    inclusion_text: str
    exclusion_text: str

    def __post_init__(self) -> None:
        if not self.trial_id:
            raise ValueError("trial_id must be non-empty")
        object.__setattr__(self, "target_diseases", tuple(self.target_diseases))
        object.__setattr__(self, "interventions", tuple(self.interventions))

    def criteria_text(self, kind: CriterionKind) -> str:
        if kind is CriterionKind.INCLUSION:
            return self.inclusion_text
        return self.exclusion_text

    def to_dict(self) -> dict:
        return {
            "trial_id": self.trial_id,
            "title": self.title,
            "summary": self.summary,
            "target_diseases": list(self.target_diseases),
            "interventions": list(self.interventions),
            "inclusion_text": self.inclusion_text,
            "exclusion_text": self.exclusion_text,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClinicalTrial":
        return cls(
            trial_id=d["trial_id"],
            title=d["title"],
            summary=d["summary"],
            target_diseases=tuple(d["target_diseases"]),
            interventions=tuple(d["interventions"]),
            inclusion_text=d["inclusion_text"],
            exclusion_text=d["exclusion_text"],
        )


@dataclass(frozen=True)
class CriterionAssessment:
    """One criterion's explanation, evidence sentence ids and label.

    ``criterion_text`` is the model-emitted criterion key, stored verbatim
    apart from whitespace trimming; the model's own criterion segmentation is
    authoritative. Label/kind agreement and evidence bounds are *reported* by
    ``validate_assessment``, not enforced here, so that invalid model output
    can be represented and diagnosed.
    """

    criterion_text: str
    kind: CriterionKind
    explanation: str
    evidence_ids: tuple[int, ...]
    label: EligibilityLabel

    def __post_init__(self) -> None:
        object.__setattr__(self, "criterion_text", self.criterion_text.strip())
        object.__setattr__(self, "evidence_ids", tuple(self.evidence_ids))

    def to_dict(self) -> dict:
        return {
            "criterion_text": self.criterion_text,
            "kind": self.kind.value,
            "explanation": self.explanation,
            "evidence_ids": list(self.evidence_ids),
            "label": self.label.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CriterionAssessment":
        return cls(
            criterion_text=d["criterion_text"],
            kind=CriterionKind.from_string(d["kind"]),
            explanation=d["explanation"],
            evidence_ids=tuple(d["evidence_ids"]),
            label=EligibilityLabel.from_string(d["label"]),
        )


@dataclass(frozen=True)
class TrialAssessment:
    """All criterion assessments for one patient-trial pair plus derived scores.

    ``rank_score`` lies in [-1, 1] and ``exclusion_score`` in [-1, 2]; both
    must equal the values recomputable from the criterion lists (see
    ``engine.compute_scores``). Use ``engine.build_assessment`` to construct
    one with consistent scores.
    """

    patient_id: str
    trial_id: str
    inclusion: tuple[CriterionAssessment, ...]
    exclusion: tuple[CriterionAssessment, ...]
    rank_score: float
    exclusion_score: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "inclusion", tuple(self.inclusion))
        object.__setattr__(self, "exclusion", tuple(self.exclusion))
        for a in self.inclusion:
            if a.kind is not CriterionKind.INCLUSION:
                raise ValueError("inclusion list contains a non-inclusion assessment")
        for a in self.exclusion:
            if a.kind is not CriterionKind.EXCLUSION:
                raise ValueError("exclusion list contains a non-exclusion assessment")

    def to_dict(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "trial_id": self.trial_id,
            "inclusion": [a.to_dict() for a in self.inclusion],
            "exclusion": [a.to_dict() for a in self.exclusion],
            "rank_score": self.rank_score,
            "exclusion_score": self.exclusion_score,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrialAssessment":
        return cls(
            patient_id=d["patient_id"],
            trial_id=d["trial_id"],
            inclusion=tuple(CriterionAssessment.from_dict(a) for a in d["inclusion"]),
            exclusion=tuple(CriterionAssessment.from_dict(a) for a in d["exclusion"]),
            rank_score=d["rank_score"],
            exclusion_score=d["exclusion_score"],
        )


@dataclass(frozen=True)
class RelevanceJudgment:
    patient_id: str
    trial_id: str
    relevance: Relevance

    def __post_init__(self) -> None:
        object.__setattr__(self, "relevance", Relevance(self.relevance))


@dataclass(frozen=True)
class GoldCriterionAnnotation:
    """A human gold label with evidence for one criterion of one pair.

    ``error_type`` is present only on annotations attached to a judged model
    error; ``reasoning_mode`` is always present.
    """

    annotation_id: str
    patient_id: str
    trial_id: str
    criterion_text: str
    kind: CriterionKind
    gold_label: EligibilityLabel
    gold_evidence_ids: tuple[int, ...]
    reasoning_mode: ReasoningMode
    annotator_id: str
    timestamp: datetime
    error_type: ErrorType | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "criterion_text", self.criterion_text.strip())
        object.__setattr__(self, "gold_evidence_ids", tuple(self.gold_evidence_ids))
        if self.timestamp.tzinfo is None:
            object.__setattr__(self, "timestamp", self.timestamp.replace(tzinfo=timezone.utc))

    def to_dict(self) -> dict:
        return {
            "annotation_id": self.annotation_id,
            "patient_id": self.patient_id,
            "trial_id": self.trial_id,
            "criterion_text": self.criterion_text,
            "kind": self.kind.value,
            "gold_label": self.gold_label.value,
            "gold_evidence_ids": list(self.gold_evidence_ids),
            "reasoning_mode": self.reasoning_mode.value,
            "error_type": self.error_type.value if self.error_type else None,
            "annotator_id": self.annotator_id,
            "timestamp": self.timestamp.astimezone(timezone.utc).isoformat(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GoldCriterionAnnotation":
        return cls(
            annotation_id=d["annotation_id"],
            patient_id=d["patient_id"],
            trial_id=d["trial_id"],
            criterion_text=d["criterion_text"],
            kind=CriterionKind.from_string(d["kind"]),
            gold_label=EligibilityLabel.from_string(d["gold_label"]),
            gold_evidence_ids=tuple(d["gold_evidence_ids"]),
            reasoning_mode=ReasoningMode(d["reasoning_mode"]),
            error_type=ErrorType(d["error_type"]) if d.get("error_type") else None,
            annotator_id=d["annotator_id"],
            timestamp=_parse_instant(d["timestamp"]),
        )


def _parse_instant(raw: str) -> datetime:
    # accept the canonical ISO-8601 "Z" UTC designator, which
    # datetime.fromisoformat only understands from Python 3.11 on
    if raw.endswith(("Z", "z")):
        raw = raw[:-1] + "+00:00"
    return datetime.fromisoformat(raw)


def validate_assessment(assessment: CriterionAssessment, note: PatientNote) -> list[str]:
    """Check a criterion assessment against a note; return violations, [] if ok."""
    violations = []
    if len(assessment.evidence_ids) > MAX_EVIDENCE_IDS:
        violations.append(
            f"evidence count > {MAX_EVIDENCE_IDS} ({len(assessment.evidence_ids)} ids)"
        )
    n = len(note.sentences)
    bad_ids = [i for i in assessment.evidence_ids if not 0 <= i < n]
    if bad_ids:
        violations.append(f"evidence ids out of range for {n}-sentence note: {bad_ids}")
    if assessment.label not in ALLOWED_LABELS[assessment.kind]:
        violations.append(
            f"label/kind mismatch: {assessment.label.value!r} not legal for "
            f"{assessment.kind.value} criteria"
        )
    return violations


_SENTENCE_BOUNDARY = re.compile(r"(?<=[.!?])\s+")


def split_sentences(text: str) -> tuple[str, ...]:
    """Naive sentence splitter for convenience ingestion of raw note text.

    Gold data should arrive pre-segmented; this splitter is deliberately
    simple (punctuation + whitespace boundaries) and makes no clinical-text
    promises.
    """
    parts = [p.strip() for p in _SENTENCE_BOUNDARY.split(text) if p.strip()]
    return tuple(parts)
