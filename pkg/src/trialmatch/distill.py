"""Teacher-output collection and fine-tuning dataset export.

Each sampled patient-trial pair yields up to two single-turn records, one per
criteria kind, mirroring the inference-time prompt split. Records are exported
only when the teacher's output validated against the criterion-output schema;
prompts are rendered without the exemplar primer since the consumer is a model
being fine-tuned on this exact format.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, replace
from pathlib import Path

from .corpus import Corpus
from .engine import PairFailure
from .gateway import (
    BackendPort,
    GenerationConfig,
    StructuredOutputFailure,
    TranscriptJournal,
    generate_validated,
    render_prompt,
    serialize_assessments,
)
from .model import CriterionKind

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DistillRecord:
    """A system-user-assistant training triple with provenance metadata."""

    system: str
    user: str
    assistant: str
    patient_id: str
    trial_id: str
    kind: CriterionKind
    teacher_name: str
    attempts_used: int

    def to_dict(self) -> dict:
        return {
            "messages": [
                {"role": "system", "content": self.system},
                {"role": "user", "content": self.user},
                {"role": "assistant", "content": self.assistant},
            ],
            "meta": {
                "patient_id": self.patient_id,
                "trial_id": self.trial_id,
                "kind": self.kind.value,
                "teacher_name": self.teacher_name,
                "attempts_used": self.attempts_used,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DistillRecord":
        roles = {m["role"]: m["content"] for m in d["messages"]}
        meta = d["meta"]
        return cls(
            system=roles["system"],
            user=roles["user"],
            assistant=roles["assistant"],
            patient_id=meta["patient_id"],
            trial_id=meta["trial_id"],
            kind=CriterionKind.from_string(meta["kind"]),
            teacher_name=meta["teacher_name"],
            attempts_used=meta["attempts_used"],
        )


def sample_pairs(train: Corpus, n: int, seed: int) -> list[tuple[str, str]]:
    """Seeded uniform sample without replacement over judged pairs, capped at n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    pairs = sorted(train.judged_pairs())
    if not pairs:
        raise ValueError("corpus has no judged pairs to sample")
    rng = random.Random(seed)
    return rng.sample(pairs, min(n, len(pairs)))


def build_records(
    pairs: list[tuple[str, str]],
    corpus: Corpus,
    backend: BackendPort,
    config: GenerationConfig,
    journal: TranscriptJournal | None = None,
) -> tuple[list[DistillRecord], list[PairFailure]]:
    """Collect validated teacher outputs for each pair and criteria kind.

    Pairs that never validate are skipped and reported, so the dataset size
    may fall short of the request.
    """
    config = replace(config, include_exemplar=False)
    patients = corpus.patients_by_id()
    trials = corpus.trials_by_id()
    records: list[DistillRecord] = []
    failures: list[PairFailure] = []
    for patient_id, trial_id in pairs:
        note = patients[patient_id]
        trial = trials[trial_id]
        for kind in CriterionKind:
            messages = render_prompt(note, trial, kind, config)
            if messages is None:
                continue
            tag = {"patient_id": patient_id, "trial_id": trial_id, "kind": kind.value}
            try:
                assessments, attempts = generate_validated(
                    backend, messages, kind, config, journal=journal, tag=tag
                )
            except StructuredOutputFailure as exc:
                failures.append(PairFailure(patient_id, trial_id, kind, str(exc)))
                logger.warning("skipping %s/%s %s: %s", patient_id, trial_id, kind.value, exc)
                continue
            assistant = f"```json\n{serialize_assessments(assessments)}\n```"
            records.append(
                DistillRecord(
                    system=messages[0].content,
                    user=messages[1].content,
                    assistant=assistant,
                    patient_id=patient_id,
                    trial_id=trial_id,
                    kind=kind,
                    teacher_name=backend.name,
                    attempts_used=attempts,
                )
            )
    return records, failures


def export_jsonl(records: list[DistillRecord], path: str | Path) -> None:
    """Write records as JSON-lines; byte-stable for identical record lists."""
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")


def read_jsonl(path: str | Path) -> list[DistillRecord]:
    records = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(DistillRecord.from_dict(json.loads(line)))
    return records
