"""Corpus loading, relevance-label mapping, patient-axis splitting and stats.

File formats:
  patients   JSON-lines {"patient_id": str, "sentences": [str, ...]}
  trials     JSON-lines {"trial_id", "title", "summary", "target_diseases",
             "interventions", "inclusion_text", "exclusion_text"}
  judgments  tab-separated "patient_id<TAB>trial_id<TAB>relevance",
             relevance in {0,1,2}
  annotations JSON-lines of gold criterion annotations
"""

from __future__ import annotations

import json
import math
import random
import statistics
from dataclasses import dataclass
from pathlib import Path

from .model import (
    ClinicalTrial,
    GoldCriterionAnnotation,
    PatientNote,
    Relevance,
    RelevanceJudgment,
)


class CorpusFormatError(ValueError):
    """An input file does not conform to its documented format."""


@dataclass(frozen=True)
class Corpus:
    """Patients, trials and the graded judgments linking them.

    Every judgment must reference an existing patient and trial, and each
    (patient, trial) pair carries at most one judgment.
    """

    patients: tuple[PatientNote, ...]
    trials: tuple[ClinicalTrial, ...]
    judgments: tuple[RelevanceJudgment, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "patients", tuple(self.patients))
        object.__setattr__(self, "trials", tuple(self.trials))
        object.__setattr__(self, "judgments", tuple(self.judgments))
        patient_ids = {p.patient_id for p in self.patients}
        if len(patient_ids) != len(self.patients):
            raise CorpusFormatError("duplicate patient_id in corpus")
        trial_ids = {t.trial_id for t in self.trials}
        if len(trial_ids) != len(self.trials):
            raise CorpusFormatError("duplicate trial_id in corpus")
        seen_pairs = set()
        for j in self.judgments:
            if j.patient_id not in patient_ids:
                raise CorpusFormatError(f"judgment references unknown patient {j.patient_id!r}")
            if j.trial_id not in trial_ids:
                raise CorpusFormatError(f"judgment references unknown trial {j.trial_id!r}")
            pair = (j.patient_id, j.trial_id)
            if pair in seen_pairs:
                raise CorpusFormatError(f"duplicate judgment for pair {pair}")
            seen_pairs.add(pair)

    def patient(self, patient_id: str) -> PatientNote:
        for p in self.patients:
            if p.patient_id == patient_id:
                return p
        raise KeyError(patient_id)

    def trial(self, trial_id: str) -> ClinicalTrial:
        for t in self.trials:
            if t.trial_id == trial_id:
                return t
        raise KeyError(trial_id)

    def patients_by_id(self) -> dict[str, PatientNote]:
        return {p.patient_id: p for p in self.patients}

    def trials_by_id(self) -> dict[str, ClinicalTrial]:
        return {t.trial_id: t for t in self.trials}

    def judged_pairs(self) -> list[tuple[str, str]]:
        return [(j.patient_id, j.trial_id) for j in self.judgments]


@dataclass(frozen=True)
class SplitResult:
    """A patient-axis train/test split; patient id sets are disjoint."""

    train: Corpus
    test: Corpus
    seed: int

    def __post_init__(self) -> None:
        train_ids = {p.patient_id for p in self.train.patients}
        test_ids = {p.patient_id for p in self.test.patients}
        if train_ids & test_ids:
            raise ValueError(f"patient leakage across split: {sorted(train_ids & test_ids)}")


def _read_jsonl(path: str | Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
    return rows


def load_patients(path: str | Path) -> list[PatientNote]:
    notes = []
    for row in _read_jsonl(path):
        try:
            notes.append(PatientNote.from_dict(row))
        except (KeyError, ValueError) as exc:
            raise CorpusFormatError(f"{path}: bad patient record ({exc})") from exc
    return notes


def load_trials(path: str | Path) -> list[ClinicalTrial]:
    trials = []
    for row in _read_jsonl(path):
        try:
            trials.append(ClinicalTrial.from_dict(row))
        except (KeyError, ValueError) as exc:
            raise CorpusFormatError(f"{path}: bad trial record ({exc})") from exc
    return trials


def load_annotations(path: str | Path) -> list[GoldCriterionAnnotation]:
    annotations = []
    for row in _read_jsonl(path):
        try:
            annotations.append(GoldCriterionAnnotation.from_dict(row))
        except (KeyError, ValueError) as exc:
            raise CorpusFormatError(f"{path}: bad annotation record ({exc})") from exc
    return annotations


def map_sigir_label(raw_class: int) -> Relevance | None:
    """Map a SIGIR referral class to a relevance grade, or None to drop.

    0 ("would not refer") maps to irrelevant, 2 ("would refer") to eligible;
    class 1 ("may refer") fits no grade and the pair is dropped.
    """
    if raw_class == 0:
        return Relevance.IRRELEVANT
    if raw_class == 2:
        return Relevance.ELIGIBLE
    if raw_class == 1:
        return None
    raise CorpusFormatError(f"unknown referral class {raw_class!r} (expected 0, 1 or 2)")


def load_judgments(path: str | Path, sigir_mapping: bool = False) -> list[RelevanceJudgment]:
    """Load tab-separated judgments; with sigir_mapping, remap referral classes.

    Without the flag, grades 0/1/2 are taken directly as
    irrelevant/excluded/eligible.
    """
    judgments = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise CorpusFormatError(
                    f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}"
                )
            patient_id, trial_id, raw = parts
            try:
                grade = int(raw)
            except ValueError:
                raise CorpusFormatError(f"{path}:{lineno}: non-integer relevance {raw!r}") from None
            if sigir_mapping:
                mapped = map_sigir_label(grade)
                if mapped is None:
                    continue
                relevance = mapped
            else:
                try:
                    relevance = Relevance(grade)
                except ValueError:
                    raise CorpusFormatError(
                        f"{path}:{lineno}: relevance {grade} not in {{0,1,2}}"
                    ) from None
            judgments.append(RelevanceJudgment(patient_id, trial_id, relevance))
    return judgments


def load_corpus(
    patients_path: str | Path,
    trials_path: str | Path,
    judgments_path: str | Path | None = None,
    sigir_mapping: bool = False,
) -> Corpus:
    patients = load_patients(patients_path)
    trials = load_trials(trials_path)
    judgments = (
        load_judgments(judgments_path, sigir_mapping=sigir_mapping) if judgments_path else []
    )
    return Corpus(tuple(patients), tuple(trials), tuple(judgments))


def _subcorpus(corpus: Corpus, patient_ids: set[str]) -> Corpus:
    patients = tuple(p for p in corpus.patients if p.patient_id in patient_ids)
    judgments = tuple(j for j in corpus.judgments if j.patient_id in patient_ids)
    judged_trials = {j.trial_id for j in judgments}
    trials = tuple(t for t in corpus.trials if t.trial_id in judged_trials)
    return Corpus(patients, trials, judgments)


def split_by_patient(corpus: Corpus, test_ratio: float, seed: int) -> SplitResult:
    """Deterministically split a corpus along the patient axis.

    Patient ids are sorted, shuffled with the seeded generator, and the first
    ceil(n * test_ratio) become the test side, so splits are platform
    independent. Judgments follow their patient; each side keeps exactly the
    trials its judgments reference.
    """
    if not 0 < test_ratio < 1:
        raise ValueError(f"test_ratio must be in (0, 1), got {test_ratio}")
    if not corpus.patients:
        raise ValueError("cannot split an empty corpus")
    ids = sorted(p.patient_id for p in corpus.patients)
    rng = random.Random(seed)
    rng.shuffle(ids)
    # round before ceiling so 15 * 0.2 = 3.0000000000000004 stays 3 test patients
    n_test = math.ceil(round(len(ids) * test_ratio, 9))
    test_ids = set(ids[:n_test])
    train_ids = set(ids[n_test:])
    return SplitResult(
        train=_subcorpus(corpus, train_ids),
        test=_subcorpus(corpus, test_ids),
        seed=seed,
    )


@dataclass(frozen=True)
class CorpusStats:
    """Summary statistics of a corpus, one row per reported quantity.

    Mean/std pairs use population standard deviation; word counts are
    whitespace tokens, so comparisons against other tokenizers are
    approximate.
    """

    n_pairs: int
    n_patients: int
    n_trials: int
    trials_per_patient: tuple[float, float]
    irrelevant_per_patient: tuple[float, float]
    excluded_per_patient: tuple[float, float]
    eligible_per_patient: tuple[float, float]
    words_per_patient: tuple[float, float]
    sentences_per_patient: tuple[float, float]

    def to_dict(self) -> dict:
        return {
            "patient_trial_pairs": self.n_pairs,
            "patients": self.n_patients,
            "trials": self.n_trials,
            "trials_per_patient": list(self.trials_per_patient),
            "irrelevant_trials_per_patient": list(self.irrelevant_per_patient),
            "excluded_trials_per_patient": list(self.excluded_per_patient),
            "eligible_trials_per_patient": list(self.eligible_per_patient),
            "words_per_patient": list(self.words_per_patient),
            "sentences_per_patient": list(self.sentences_per_patient),
        }


def _mean_std(values: list[float]) -> tuple[float, float]:
    if not values:
        return (0.0, 0.0)
    mean = statistics.fmean(values)
    std = statistics.pstdev(values) if len(values) > 1 else 0.0
    return (mean, std)


def corpus_stats(corpus: Corpus) -> CorpusStats:
    """Report pair/patient/trial counts and per-patient distributions."""
    per_patient: dict[str, dict[Relevance, int]] = {
        p.patient_id: {g: 0 for g in Relevance} for p in corpus.patients
    }
    for j in corpus.judgments:
        per_patient[j.patient_id][j.relevance] += 1

    def grade_counts(grade: Relevance) -> list[float]:
        return [float(counts[grade]) for counts in per_patient.values()]

    totals = [float(sum(counts.values())) for counts in per_patient.values()]
    words = [float(sum(len(s.split()) for s in p.sentences)) for p in corpus.patients]
    sentences = [float(len(p.sentences)) for p in corpus.patients]
    return CorpusStats(
        n_pairs=len(corpus.judgments),
        n_patients=len(corpus.patients),
        n_trials=len(corpus.trials),
        trials_per_patient=_mean_std(totals),
        irrelevant_per_patient=_mean_std(grade_counts(Relevance.IRRELEVANT)),
        excluded_per_patient=_mean_std(grade_counts(Relevance.EXCLUDED)),
        eligible_per_patient=_mean_std(grade_counts(Relevance.ELIGIBLE)),
        words_per_patient=_mean_std(words),
        sentences_per_patient=_mean_std(sentences),
    )
