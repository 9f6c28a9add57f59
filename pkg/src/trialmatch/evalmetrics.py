"""Ranking metrics, criterion-level accuracies, evidence faithfulness and
head-to-head comparison.

NDCG uses exponential gain (2^rel - 1) with a log2(i+1) discount, the standard
for graded relevance. Precision@k counts only the eligible grade as relevant.
AUROC is the Mann-Whitney statistic with ties at 0.5, pooled across patients
by default (per-patient averaging is available behind a flag); inputs are
eligible-vs-excluded pairs scored by the rank score, with the negated
exclusion score available as an alternative. Evidence precision/recall/F1 are
micro-averaged so empty-evidence criteria cannot dominate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .engine import RankedList
from .model import (
    GoldCriterionAnnotation,
    CriterionAssessment,
    ReasoningMode,
    Relevance,
    RelevanceJudgment,
    TrialAssessment,
)
from .textmetrics import align_criterion


class UndefinedMetricError(ValueError):
    """The metric is undefined for this input (e.g. one-class AUROC)."""


def ndcg_at_k(ranked_relevances: list[int], k: int) -> float:
    """Normalized discounted cumulative gain at cutoff k; 0 when all grades are 0."""
    if k < 1:
        raise ValueError("k must be >= 1")
    for g in ranked_relevances:
        if g not in (0, 1, 2):
            raise ValueError(f"grades must be in {{0,1,2}}, got {g}")

    def dcg(grades: list[int]) -> float:
        return sum((2**g - 1) / math.log2(i + 1) for i, g in enumerate(grades[:k], start=1))

    ideal = sorted(ranked_relevances, reverse=True)
    idcg = dcg(ideal)
    if idcg == 0:
        return 0.0
    return dcg(ranked_relevances) / idcg


def precision_at_k(ranked_relevances: list[int], k: int) -> float:
    """Fraction of the top min(k, n) entries graded eligible.

    The denominator is k for lists of at least k entries, otherwise the list
    length.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not ranked_relevances:
        return 0.0
    top = ranked_relevances[:k]
    denominator = k if len(ranked_relevances) >= k else len(ranked_relevances)
    return sum(1 for g in top if g == Relevance.ELIGIBLE) / denominator


def auroc(scores: list[float], labels: list[bool]) -> float:
    """Mann-Whitney AUROC: P(score_pos > score_neg) with ties counted 0.5.

    Computed via midranks in O(n log n); raises UndefinedMetricError when
    either class is empty.
    """
    if len(scores) != len(labels):
        raise ValueError("scores and labels must have equal length")
    n_pos = sum(1 for y in labels if y)
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"AUROC undefined: {n_pos} positives, {n_neg} negatives"
        )
    order = sorted(range(len(scores)), key=lambda i: scores[i])
    ranks = [0.0] * len(scores)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        midrank = (i + j) / 2 + 1
        for t in range(i, j + 1):
            ranks[order[t]] = midrank
        i = j + 1
    rank_sum_pos = sum(r for r, y in zip(ranks, labels) if y)
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2
    return u / (n_pos * n_neg)


@dataclass(frozen=True)
class RankingEval:
    """Aggregate ranking quality: per-patient means plus pooled AUROC."""

    ndcg_at_10: float
    precision_at_10: float
    auroc: float
    per_patient: dict[str, dict[str, float | None]]

    def to_dict(self) -> dict:
        return {
            "ndcg_at_10": self.ndcg_at_10,
            "precision_at_10": self.precision_at_10,
            "auroc": self.auroc,
            "per_patient": self.per_patient,
        }


@dataclass(frozen=True)
class CriterionEval:
    """Criterion-level accuracy split by reasoning mode plus evidence scores."""

    explicit_cla: float
    implicit_cla: float
    overall_cla: float
    evidence_precision: float
    evidence_recall: float
    evidence_f1: float
    n_matched: int
    n_unmatched_gold: int

    def to_dict(self) -> dict:
        def json_safe(value: float) -> float | None:
            return None if math.isnan(value) else value

        return {
            "explicit_cla": json_safe(self.explicit_cla),
            "implicit_cla": json_safe(self.implicit_cla),
            "overall_cla": json_safe(self.overall_cla),
            "evidence_precision": self.evidence_precision,
            "evidence_recall": self.evidence_recall,
            "evidence_f1": self.evidence_f1,
            "n_matched": self.n_matched,
            "n_unmatched_gold": self.n_unmatched_gold,
        }


@dataclass(frozen=True)
class HeadToHead:
    """Win counts over criteria where two models' labels disagree."""

    model_a: str
    model_b: str
    a_wins: int
    b_wins: int
    ties: int
    both_wrong: int

    def to_dict(self) -> dict:
        return {
            "model_a": self.model_a,
            "model_b": self.model_b,
            "a_wins": self.a_wins,
            "b_wins": self.b_wins,
            "ties": self.ties,
            "both_wrong": self.both_wrong,
        }


@dataclass(frozen=True)
class MatchedCriterion:
    """A gold annotation aligned to one model prediction."""

    gold: GoldCriterionAnnotation
    predicted: CriterionAssessment


def match_gold_to_predictions(
    assessments: list[TrialAssessment],
    gold: list[GoldCriterionAnnotation],
    threshold: float = 0.9,
) -> tuple[list[MatchedCriterion], int]:
    """Align each gold annotation to a prediction in its (patient, trial, kind).

    Unmatched gold annotations are counted, not dropped, so criterion
    segmentation divergence across models stays visible.
    """
    by_context: dict[tuple[str, str, str], list[CriterionAssessment]] = {}
    for ta in assessments:
        for a in list(ta.inclusion) + list(ta.exclusion):
            key = (ta.patient_id, ta.trial_id, a.kind.value)
            by_context.setdefault(key, []).append(a)
    matched: list[MatchedCriterion] = []
    unmatched = 0
    for g in gold:
        candidates = by_context.get((g.patient_id, g.trial_id, g.kind.value), [])
        index = align_criterion(g.criterion_text, [c.criterion_text for c in candidates], threshold)
        if index is None:
            unmatched += 1
        else:
            matched.append(MatchedCriterion(gold=g, predicted=candidates[index]))
    return matched, unmatched


def criterion_cla(
    matched: list[MatchedCriterion], mode_filter: str = "all"
) -> float:
    """Accuracy of predicted labels over matched gold annotations.

    ``mode_filter`` restricts to 'explicit' or 'implicit' gold annotations;
    'all' uses every matched pair. Raises UndefinedMetricError when the
    filtered set is empty.
    """
    if mode_filter not in ("explicit", "implicit", "all"):
        raise ValueError(f"unknown mode_filter {mode_filter!r}")
    if mode_filter == "all":
        pool = matched
    else:
        mode = ReasoningMode(mode_filter)
        pool = [m for m in matched if m.gold.reasoning_mode is mode]
    if not pool:
        raise UndefinedMetricError(f"no matched annotations for mode {mode_filter!r}")
    correct = sum(1 for m in pool if m.predicted.label is m.gold.gold_label)
    return correct / len(pool)


def evidence_prf(
    pairs: list[tuple[set[int], set[int]]]
) -> tuple[float, float, float]:
    """Micro-averaged evidence precision, recall and F1 over matched pairs.

    Pairs with both sides empty contribute nothing; when every pair is like
    that the task is vacuous and all three scores are 1. A zero denominator
    against a non-empty opposite side scores 0.
    """
    overlap = sum(len(pred & gold) for pred, gold in pairs)
    total_pred = sum(len(pred) for pred, _ in pairs)
    total_gold = sum(len(gold) for _, gold in pairs)
    if total_pred > 0:
        precision = overlap / total_pred
    else:
        precision = 1.0 if total_gold == 0 else 0.0
    if total_gold > 0:
        recall = overlap / total_gold
    else:
        recall = 1.0 if total_pred == 0 else 0.0
    if precision + recall == 0:
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return precision, recall, f1


def criterion_eval(
    assessments: list[TrialAssessment],
    gold: list[GoldCriterionAnnotation],
    threshold: float = 0.9,
) -> CriterionEval:
    """Full criterion-level evaluation of one model against gold annotations."""
    matched, unmatched = match_gold_to_predictions(assessments, gold, threshold)
    if not matched:
        raise UndefinedMetricError("no gold annotation matched any prediction")

    def cla_or_nan(mode: str) -> float:
        try:
            return criterion_cla(matched, mode)
        except UndefinedMetricError:
            return math.nan

    precision, recall, f1 = evidence_prf(
        [(set(m.predicted.evidence_ids), set(m.gold.gold_evidence_ids)) for m in matched]
    )
    return CriterionEval(
        explicit_cla=cla_or_nan("explicit"),
        implicit_cla=cla_or_nan("implicit"),
        overall_cla=criterion_cla(matched, "all"),
        evidence_precision=precision,
        evidence_recall=recall,
        evidence_f1=f1,
        n_matched=len(matched),
        n_unmatched_gold=unmatched,
    )


def head_to_head(
    preds_a: list[TrialAssessment],
    preds_b: list[TrialAssessment],
    gold: list[GoldCriterionAnnotation],
    model_a: str = "a",
    model_b: str = "b",
    threshold: float = 0.9,
    overrides: dict[str, str] | None = None,
) -> HeadToHead:
    """Compare two models on gold criteria where both answered and disagree.

    Gold arbitrates by default; human adjudication verdicts, keyed by
    annotation id with values 'a', 'b' or 'tie', replace the gold-derived
    outcome where present.
    """
    matched_a, _ = match_gold_to_predictions(preds_a, gold, threshold)
    matched_b, _ = match_gold_to_predictions(preds_b, gold, threshold)
    a_by_id = {m.gold.annotation_id: m.predicted for m in matched_a}
    b_by_id = {m.gold.annotation_id: m.predicted for m in matched_b}
    overrides = overrides or {}
    a_wins = b_wins = ties = both_wrong = 0
    for g in gold:
        pred_a = a_by_id.get(g.annotation_id)
        pred_b = b_by_id.get(g.annotation_id)
        if pred_a is None or pred_b is None:
            continue
        if pred_a.label is pred_b.label:
            continue
        verdict = overrides.get(g.annotation_id)
        if verdict is None:
            if pred_a.label is g.gold_label:
                verdict = "a"
            elif pred_b.label is g.gold_label:
                verdict = "b"
            else:
                verdict = "both_wrong"
        if verdict == "a":
            a_wins += 1
        elif verdict == "b":
            b_wins += 1
        elif verdict == "tie":
            ties += 1
        else:
            both_wrong += 1
    return HeadToHead(model_a, model_b, a_wins, b_wins, ties, both_wrong)


def _grades_for_ranking(
    ranked: RankedList, judgment_by_pair: dict[tuple[str, str], Relevance]
) -> list[int]:
    return [
        int(judgment_by_pair.get((ranked.patient_id, e.trial_id), Relevance.IRRELEVANT))
        for e in ranked.entries
    ]


def rank_eval(
    ranked_lists: list[RankedList],
    judgments: list[RelevanceJudgment],
    k: int = 10,
    auroc_score: str = "rank",
    per_patient_auroc: bool = False,
) -> RankingEval:
    """Evaluate rankings: per-patient NDCG@k / Precision@k means, pooled AUROC.

    AUROC discriminates eligible from excluded pairs; irrelevant pairs are
    omitted. ``auroc_score`` selects the rank score ('rank') or the negated
    exclusion score ('neg_exclusion') as the discriminant. Failed pairs score
    minus infinity.
    """
    if auroc_score not in ("rank", "neg_exclusion"):
        raise ValueError(f"unknown auroc_score {auroc_score!r}")
    judgment_by_pair = {(j.patient_id, j.trial_id): j.relevance for j in judgments}
    per_patient: dict[str, dict[str, float | None]] = {}
    pooled_scores: list[float] = []
    pooled_labels: list[bool] = []
    patient_aurocs: list[float] = []
    for ranked in ranked_lists:
        grades = _grades_for_ranking(ranked, judgment_by_pair)
        patient_scores: list[float] = []
        patient_labels: list[bool] = []
        for entry in ranked.entries:
            relevance = judgment_by_pair.get((ranked.patient_id, entry.trial_id))
            if relevance not in (Relevance.ELIGIBLE, Relevance.EXCLUDED):
                continue
            if entry.rank_score is None:
                score = -math.inf
            elif auroc_score == "rank":
                score = entry.rank_score
            else:
                score = -entry.exclusion_score if entry.exclusion_score is not None else -math.inf
            patient_scores.append(score)
            patient_labels.append(relevance is Relevance.ELIGIBLE)
        pooled_scores.extend(patient_scores)
        pooled_labels.extend(patient_labels)
        try:
            patient_auroc: float | None = auroc(patient_scores, patient_labels)
            patient_aurocs.append(patient_auroc)
        except UndefinedMetricError:
            patient_auroc = None
        per_patient[ranked.patient_id] = {
            "ndcg_at_10": ndcg_at_k(grades, k),
            "precision_at_10": precision_at_k(grades, k),
            "auroc": patient_auroc,
        }
    if not per_patient:
        raise UndefinedMetricError("no ranked lists to evaluate")
    mean_ndcg = sum(v["ndcg_at_10"] for v in per_patient.values()) / len(per_patient)
    mean_precision = sum(v["precision_at_10"] for v in per_patient.values()) / len(per_patient)
    if per_patient_auroc:
        if not patient_aurocs:
            raise UndefinedMetricError("AUROC undefined for every patient")
        overall_auroc = sum(patient_aurocs) / len(patient_aurocs)
    else:
        overall_auroc = auroc(pooled_scores, pooled_labels)
    return RankingEval(
        ndcg_at_10=mean_ndcg,
        precision_at_10=mean_precision,
        auroc=overall_auroc,
        per_patient=per_patient,
    )
