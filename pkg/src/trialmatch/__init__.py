"""Criterion-level patient-to-trial matching, ranking and evaluation toolkit."""

from .model import (
    ALLOWED_LABELS,
    ClinicalTrial,
    CriterionAssessment,
    CriterionKind,
    EligibilityLabel,
    ErrorType,
    GoldCriterionAnnotation,
    PatientNote,
    ReasoningMode,
    Relevance,
    RelevanceJudgment,
    TrialAssessment,
    validate_assessment,
)

__all__ = [
    "ALLOWED_LABELS",
    "ClinicalTrial",
    "CriterionAssessment",
    "CriterionKind",
    "EligibilityLabel",
    "ErrorType",
    "GoldCriterionAnnotation",
    "PatientNote",
    "ReasoningMode",
    "Relevance",
    "RelevanceJudgment",
    "TrialAssessment",
    "validate_assessment",
]

__version__ = "0.1.0"
