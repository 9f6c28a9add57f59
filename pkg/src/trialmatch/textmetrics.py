"""ROUGE-L scoring, demographic filtering and novelty-based criterion selection.

ROUGE here is ROUGE-L F1 over lowercase whitespace tokens: needs no n-gram
order choice and is the common default for short criterion strings. Novelty
selection keeps a criterion only while its best ROUGE score against everything
already kept stays below the threshold tau, sharing one accepted set across
all labels.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass
from pathlib import Path

from .model import CriterionKind, EligibilityLabel


@dataclass(frozen=True)
class CriterionRow:
    """One flattened prediction: a criterion with its label and provenance."""

    criterion_text: str
    predicted_label: EligibilityLabel
    patient_id: str
    trial_id: str
    kind: CriterionKind

    def to_dict(self) -> dict:
        return {
            "criterion_text": self.criterion_text,
            "predicted_label": self.predicted_label.value,
            "patient_id": self.patient_id,
            "trial_id": self.trial_id,
            "kind": self.kind.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CriterionRow":
        return cls(
            criterion_text=d["criterion_text"],
            predicted_label=EligibilityLabel.from_string(d["predicted_label"]),
            patient_id=d["patient_id"],
            trial_id=d["trial_id"],
            kind=CriterionKind.from_string(d["kind"]),
        )


@dataclass(frozen=True)
class SelectionPool:
    """The five stages of the annotation-selection pipeline.

    Each stage is a sub-multiset of its predecessor (by row identity):
    predicted -> reduced -> selected -> novel -> final.
    """

    predicted: tuple[CriterionRow, ...]
    reduced: tuple[CriterionRow, ...]
    selected: tuple[CriterionRow, ...]
    novel: tuple[CriterionRow, ...]
    final: tuple[CriterionRow, ...]
    tau: float

    def __post_init__(self) -> None:
        if not 0 < self.tau <= 1:
            raise ValueError(f"tau must be in (0, 1], got {self.tau}")
        chain = [
            ("predicted", self.predicted),
            ("reduced", self.reduced),
            ("selected", self.selected),
            ("novel", self.novel),
            ("final", self.final),
        ]
        for (outer_name, outer), (inner_name, inner) in zip(chain, chain[1:]):
            outer_ids = {id(r) for r in outer}
            missing = [r for r in inner if id(r) not in outer_ids]
            if missing:
                raise ValueError(f"{inner_name} is not a subset of {outer_name}")


def tokenize(text: str) -> list[str]:
    return text.lower().split()


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    # Rolling single-row DP keeps memory linear in the shorter string.
    if len(b) > len(a):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        current = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                current.append(prev[j - 1] + 1)
            else:
                current.append(max(prev[j], current[j - 1]))
        prev = current
    return prev[-1]


def rouge_l_f1(candidate: str, reference: str) -> float:
    """ROUGE-L F1 of two strings; 0 when either side is empty or disjoint."""
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand or not ref:
        return 0.0
    lcs = _lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    return 2 * precision * recall / (precision + recall)


def rouge_against_set(candidate: str, references: list[str], aggregate: str = "max") -> float:
    """Score a candidate against a reference set; 0 for an empty set.

    "max" is the default aggregation; "mean" is available as an alternative
    for sensitivity checks.
    """
    if not references:
        return 0.0
    scores = [rouge_l_f1(candidate, ref) for ref in references]
    if aggregate == "max":
        return max(scores)
    if aggregate == "mean":
        return sum(scores) / len(scores)
    raise ValueError(f"unknown aggregate {aggregate!r} (expected 'max' or 'mean')")


_DEMOGRAPHIC = re.compile(r"\b(age|gender)\b", re.IGNORECASE)


def filter_demographics(rows: list[CriterionRow]) -> list[CriterionRow]:
    """Drop rows whose criterion mentions age or gender as a whole word.

    Whole-word matching keeps criteria like "triage within 24h" or "alkylating
    agent" that merely embed the letters.
    """
    return [r for r in rows if not _DEMOGRAPHIC.search(r.criterion_text)]


def select_per_label(
    rows: list[CriterionRow], per_label: int, seed: int
) -> list[CriterionRow]:
    """Seeded uniform sample of up to per_label rows for each predicted label."""
    if per_label < 1:
        raise ValueError("per_label must be >= 1")
    rng = random.Random(seed)
    selected: list[CriterionRow] = []
    by_label: dict[str, list[CriterionRow]] = {}
    for row in rows:
        by_label.setdefault(row.predicted_label.value, []).append(row)
    for label in sorted(by_label):
        group = by_label[label]
        k = min(per_label, len(group))
        selected.extend(rng.sample(group, k))
    return selected


def select_novel(
    selected: list[CriterionRow], tau: float, aggregate: str = "max"
) -> list[CriterionRow]:
    """Keep criteria whose novelty index 1 - score/tau stays positive.

    Labels are visited in lexicographic order and rows in input order within
    each label; the accepted set is shared across labels. Acceptance of a row
    therefore means its ROUGE score against every earlier accepted row is
    below tau.
    """
    if not 0 < tau <= 1:
        raise ValueError(f"tau must be in (0, 1], got {tau}")
    by_label: dict[str, list[CriterionRow]] = {}
    for row in selected:
        by_label.setdefault(row.predicted_label.value, []).append(row)
    novel: list[CriterionRow] = []
    accepted_texts: list[str] = []
    for label in sorted(by_label):
        for row in by_label[label]:
            score = rouge_against_set(row.criterion_text, accepted_texts, aggregate=aggregate)
            novelty_index = 1 - score / tau
            if novelty_index > 0:
                novel.append(row)
                accepted_texts.append(row.criterion_text)
    return novel


def sample_final(novel: list[CriterionRow], per_label: int, seed: int) -> list[CriterionRow]:
    """Seeded uniform per-label sampling of the final annotation set."""
    return select_per_label(novel, per_label, seed)


def align_criterion(
    predicted_text: str, gold_texts: list[str], threshold: float = 0.9
) -> int | None:
    """Return the best-scoring gold index if its score clears the threshold.

    Ties break toward the lowest index; below-threshold maxima yield None.
    """
    if not 0 < threshold <= 1:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    best_index: int | None = None
    best_score = -1.0
    for i, gold in enumerate(gold_texts):
        score = rouge_l_f1(predicted_text, gold)
        if score > best_score:
            best_score = score
            best_index = i
    if best_index is None or best_score < threshold:
        return None
    return best_index


def build_selection_pool(
    predicted: list[CriterionRow],
    tau: float = 0.7,
    selected_per_label: int = 500,
    final_per_label: int = 100,
    seed: int = 0,
) -> SelectionPool:
    """Run the full selection pipeline from flattened predictions."""
    reduced = filter_demographics(predicted)
    selected = select_per_label(reduced, selected_per_label, seed)
    novel = select_novel(selected, tau)
    final = sample_final(novel, final_per_label, seed)
    return SelectionPool(
        predicted=tuple(predicted),
        reduced=tuple(reduced),
        selected=tuple(selected),
        novel=tuple(novel),
        final=tuple(final),
        tau=tau,
    )


def write_selection_pool(path: str | Path, pool: SelectionPool) -> None:
    """Serialize all pipeline stages as stage-tagged JSON-lines."""
    stages = [
        ("predicted", pool.predicted),
        ("reduced", pool.reduced),
        ("selected", pool.selected),
        ("novel", pool.novel),
        ("final", pool.final),
    ]
    with open(path, "w", encoding="utf-8") as f:
        for stage, rows in stages:
            for row in rows:
                record = {"stage": stage, **row.to_dict()}
                f.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


def read_selection_stage(path: str | Path, stage: str) -> list[CriterionRow]:
    rows = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            if record.get("stage") == stage:
                rows.append(CriterionRow.from_dict(record))
    return rows
