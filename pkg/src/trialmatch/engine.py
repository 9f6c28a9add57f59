"""Per-pair assessment orchestration, trial scoring and per-patient ranking.

The rank score is the fraction of met inclusion criteria minus the fraction
of met exclusion criteria; the exclusion score adds indicator penalties for
any unmet inclusion or met exclusion criterion and subtracts the met-inclusion
fraction. All percentage quantities are fractions in [0, 1]. "No relevant
information" counts in denominators but is neither met nor unmet.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .corpus import Corpus
from .gateway import (
    BackendPort,
    GenerationConfig,
    StructuredOutputFailure,
    TranscriptJournal,
    generate_validated,
    render_prompt,
)
from .model import (
    ClinicalTrial,
    CriterionAssessment,
    CriterionKind,
    EligibilityLabel,
    PatientNote,
    TrialAssessment,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PairFailure:
    """A patient-trial pair whose generation never produced valid output."""

    patient_id: str
    trial_id: str
    kind: CriterionKind
    reason: str

    def to_dict(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "trial_id": self.trial_id,
            "kind": self.kind.value,
            "reason": self.reason,
        }


class PairAssessmentError(Exception):
    """Raised by assess_pair when either kind exhausts its retries."""

    def __init__(self, failure: PairFailure):
        super().__init__(f"{failure.patient_id}/{failure.trial_id}: {failure.reason}")
        self.failure = failure


@dataclass(frozen=True)
class RankedEntry:
    """One trial in a patient's ranking; None scores mark a failed pair."""

    trial_id: str
    rank_score: float | None
    exclusion_score: float | None

    @property
    def failed(self) -> bool:
        return self.rank_score is None

    def to_dict(self) -> dict:
        return {
            "trial_id": self.trial_id,
            "rank_score": self.rank_score,
            "exclusion_score": self.exclusion_score,
        }


@dataclass(frozen=True)
class RankedList:
    """A patient's trials sorted by rank score descending, trial id ascending.

    Failed pairs sort last (their score is treated as minus infinity) and are
    ordered among themselves by trial id.
    """

    patient_id: str
    entries: tuple[RankedEntry, ...]

    def to_dict(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "entries": [e.to_dict() for e in self.entries],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RankedList":
        return cls(
            patient_id=d["patient_id"],
            entries=tuple(
                RankedEntry(e["trial_id"], e["rank_score"], e["exclusion_score"])
                for e in d["entries"]
            ),
        )


def compute_scores(
    inclusion: list[CriterionAssessment] | tuple[CriterionAssessment, ...],
    exclusion: list[CriterionAssessment] | tuple[CriterionAssessment, ...],
) -> tuple[float, float]:
    """Compute (rank_score, exclusion_score) from criterion label lists.

    Empty criterion lists contribute 0 to every fraction, so a trial without
    criteria of a kind is neither rewarded nor penalized.
    """
    for a in inclusion:
        if a.kind is not CriterionKind.INCLUSION:
            raise ValueError("inclusion list contains a non-inclusion assessment")
    for a in exclusion:
        if a.kind is not CriterionKind.EXCLUSION:
            raise ValueError("exclusion list contains a non-exclusion assessment")
    n_inc = len(inclusion)
    n_exc = len(exclusion)
    met_incl = (
        sum(1 for a in inclusion if a.label is EligibilityLabel.INCLUDED) / n_inc if n_inc else 0.0
    )
    unmet_incl = (
        sum(1 for a in inclusion if a.label is EligibilityLabel.NOT_INCLUDED) / n_inc
        if n_inc
        else 0.0
    )
    met_excl = (
        sum(1 for a in exclusion if a.label is EligibilityLabel.EXCLUDED) / n_exc if n_exc else 0.0
    )
    rank_score = met_incl - met_excl
    exclusion_score = (
        (1.0 if unmet_incl > 0 else 0.0) + (1.0 if met_excl > 0 else 0.0) - met_incl
    )
    return rank_score, exclusion_score


def build_assessment(
    patient_id: str,
    trial_id: str,
    inclusion: list[CriterionAssessment] | tuple[CriterionAssessment, ...],
    exclusion: list[CriterionAssessment] | tuple[CriterionAssessment, ...],
) -> TrialAssessment:
    """Construct a TrialAssessment with scores derived from its criteria."""
    rank_score, exclusion_score = compute_scores(inclusion, exclusion)
    return TrialAssessment(
        patient_id=patient_id,
        trial_id=trial_id,
        inclusion=tuple(inclusion),
        exclusion=tuple(exclusion),
        rank_score=rank_score,
        exclusion_score=exclusion_score,
    )


def _clamp_evidence(
    assessments: dict[str, CriterionAssessment], note: PatientNote, trial_id: str
) -> list[CriterionAssessment]:
    n = len(note.sentences)
    cleaned = []
    for a in assessments.values():
        valid = tuple(i for i in a.evidence_ids if 0 <= i < n)
        if len(valid) != len(a.evidence_ids):
            dropped = [i for i in a.evidence_ids if not 0 <= i < n]
            logger.warning(
                "pair %s/%s criterion %r: dropped out-of-range evidence ids %s "
                "(note has %d sentences)",
                note.patient_id,
                trial_id,
                a.criterion_text,
                dropped,
                n,
            )
            a = CriterionAssessment(
                criterion_text=a.criterion_text,
                kind=a.kind,
                explanation=a.explanation,
                evidence_ids=valid,
                label=a.label,
            )
        cleaned.append(a)
    return cleaned


def assess_pair(
    note: PatientNote,
    trial: ClinicalTrial,
    backend: BackendPort,
    config: GenerationConfig,
    journal: TranscriptJournal | None = None,
) -> TrialAssessment:
    """Run both criteria kinds for one pair and compute its scores.

    A kind with empty criteria text contributes an empty assessment list.
    Evidence ids outside the note are dropped with a logged warning. Raises
    PairAssessmentError when either kind exhausts its retries.
    """
    per_kind: dict[CriterionKind, list[CriterionAssessment]] = {}
    for kind in CriterionKind:
        messages = render_prompt(note, trial, kind, config)
        if messages is None:
            per_kind[kind] = []
            continue
        tag = {"patient_id": note.patient_id, "trial_id": trial.trial_id, "kind": kind.value}
        try:
            assessments, _attempts = generate_validated(
                backend, messages, kind, config, journal=journal, tag=tag
            )
        except StructuredOutputFailure as exc:
            raise PairAssessmentError(
                PairFailure(note.patient_id, trial.trial_id, kind, str(exc))
            ) from exc
        per_kind[kind] = _clamp_evidence(assessments, note, trial.trial_id)
    return build_assessment(
        note.patient_id,
        trial.trial_id,
        per_kind[CriterionKind.INCLUSION],
        per_kind[CriterionKind.EXCLUSION],
    )


def assess_corpus(
    corpus: Corpus,
    backend: BackendPort,
    config: GenerationConfig,
    workers: int = 1,
    journal: TranscriptJournal | None = None,
) -> tuple[list[TrialAssessment], list[PairFailure]]:
    """Assess every judged pair; aggregation is deterministic regardless of workers."""
    patients = corpus.patients_by_id()
    trials = corpus.trials_by_id()
    pairs = corpus.judged_pairs()

    def one(pair: tuple[str, str]):
        patient_id, trial_id = pair
        try:
            return assess_pair(patients[patient_id], trials[trial_id], backend, config, journal)
        except PairAssessmentError as exc:
            return exc.failure

    if workers <= 1:
        results = [one(p) for p in pairs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, pairs))

    assessments = [r for r in results if isinstance(r, TrialAssessment)]
    failures = [r for r in results if isinstance(r, PairFailure)]
    assessments.sort(key=lambda a: (a.patient_id, a.trial_id))
    failures.sort(key=lambda f: (f.patient_id, f.trial_id))
    return assessments, failures


def rank_trials(
    patient_id: str,
    assessments: list[TrialAssessment] | tuple[TrialAssessment, ...],
    failures: list[PairFailure] | tuple[PairFailure, ...] = (),
) -> RankedList:
    """Sort one patient's assessed trials; failed pairs rank last by trial id."""
    for a in assessments:
        if a.patient_id != patient_id:
            raise ValueError(
                f"assessment for patient {a.patient_id!r} passed to ranking of {patient_id!r}"
            )
    for f in failures:
        if f.patient_id != patient_id:
            raise ValueError(
                f"failure for patient {f.patient_id!r} passed to ranking of {patient_id!r}"
            )
    scored = sorted(assessments, key=lambda a: (-a.rank_score, a.trial_id))
    entries = [RankedEntry(a.trial_id, a.rank_score, a.exclusion_score) for a in scored]
    failed_ids = sorted({f.trial_id for f in failures})
    entries.extend(RankedEntry(t, None, None) for t in failed_ids)
    return RankedList(patient_id=patient_id, entries=tuple(entries))


def rank_all(
    assessments: list[TrialAssessment], failures: list[PairFailure] | None = None
) -> list[RankedList]:
    """Group assessments by patient and rank each patient's trials."""
    by_patient: dict[str, list[TrialAssessment]] = {}
    for a in assessments:
        by_patient.setdefault(a.patient_id, []).append(a)
    fail_by_patient: dict[str, list[PairFailure]] = {}
    for f in failures or []:
        fail_by_patient.setdefault(f.patient_id, []).append(f)
        by_patient.setdefault(f.patient_id, [])
    return [
        rank_trials(pid, by_patient[pid], fail_by_patient.get(pid, []))
        for pid in sorted(by_patient)
    ]


def write_assessments(path: str | Path, assessments: list[TrialAssessment]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for a in assessments:
            f.write(json.dumps(a.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")


def read_assessments(path: str | Path) -> list[TrialAssessment]:
    assessments = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                assessments.append(TrialAssessment.from_dict(json.loads(line)))
    return assessments


def write_ranked_lists(directory: str | Path, ranked: list[RankedList]) -> None:
    """Write one ranking file per patient under directory/rankings."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for r in ranked:
        path = directory / f"{r.patient_id}.json"
        with open(path, "w", encoding="utf-8") as f:
            json.dump(r.to_dict(), f, ensure_ascii=False, sort_keys=True, indent=None)
            f.write("\n")


def read_ranked_lists(directory: str | Path) -> list[RankedList]:
    directory = Path(directory)
    ranked = []
    for path in sorted(directory.glob("*.json")):
        with open(path, encoding="utf-8") as f:
            ranked.append(RankedList.from_dict(json.load(f)))
    return ranked
