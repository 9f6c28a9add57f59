import itertools
import json
import logging
import random
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from trialmatch.engine import (
    PairAssessmentError,
    PairFailure,
    RankedEntry,
    RankedList,
    assess_pair,
    build_assessment,
    compute_scores,
    rank_all,
    rank_trials,
    read_assessments,
    read_ranked_lists,
    write_assessments,
    write_ranked_lists,
)
from trialmatch.gateway import GenerationConfig, SequenceBackend
from trialmatch.model import CriterionAssessment, CriterionKind, EligibilityLabel

INCLUSION_LABELS = [
    EligibilityLabel.INCLUDED,
    EligibilityLabel.NOT_INCLUDED,
    EligibilityLabel.NO_RELEVANT_INFORMATION,
]
EXCLUSION_LABELS = [
    EligibilityLabel.EXCLUDED,
    EligibilityLabel.NOT_EXCLUDED,
    EligibilityLabel.NO_RELEVANT_INFORMATION,
]


def inclusion(label):
    return CriterionAssessment("c", CriterionKind.INCLUSION, "e", (), label)


def exclusion(label):
    return CriterionAssessment("c", CriterionKind.EXCLUSION, "e", (), label)


def inclusion_list(*labels):
    return [inclusion(l) for l in labels]


def exclusion_list(*labels):
    return [exclusion(l) for l in labels]


class TestComputeScores:
    def test_mixed_example(self):
        inc = inclusion_list(
            EligibilityLabel.INCLUDED,
            EligibilityLabel.INCLUDED,
            EligibilityLabel.INCLUDED,
            EligibilityLabel.NO_RELEVANT_INFORMATION,
        )
        exc = exclusion_list(EligibilityLabel.EXCLUDED, EligibilityLabel.NOT_EXCLUDED)
        rank_score, exclusion_score = compute_scores(inc, exc)
        assert rank_score == pytest.approx(0.25)
        assert exclusion_score == pytest.approx(0.25)

    def test_best_case(self):
        inc = inclusion_list(EligibilityLabel.INCLUDED, EligibilityLabel.INCLUDED)
        rank_score, exclusion_score = compute_scores(inc, [])
        assert rank_score == 1.0
        assert exclusion_score == -1.0

    def test_half_met_half_unmet(self):
        inc = inclusion_list(EligibilityLabel.INCLUDED, EligibilityLabel.NOT_INCLUDED)
        exc = exclusion_list(
            EligibilityLabel.NOT_EXCLUDED,
            EligibilityLabel.NOT_EXCLUDED,
            EligibilityLabel.NO_RELEVANT_INFORMATION,
        )
        rank_score, exclusion_score = compute_scores(inc, exc)
        assert rank_score == pytest.approx(0.5)
        assert exclusion_score == pytest.approx(0.5)

    def test_empty_lists_contribute_zero(self):
        assert compute_scores([], []) == (0.0, 0.0)

    def test_kind_restriction_checked(self):
        with pytest.raises(ValueError):
            compute_scores(exclusion_list(EligibilityLabel.EXCLUDED), [])
        with pytest.raises(ValueError):
            compute_scores([], inclusion_list(EligibilityLabel.INCLUDED))

    def test_exhaustive_small_against_recount(self):
        # Independent recount of the formulas over every label sequence with
        # up to 3 criteria per kind (full 4x4 is the acceptance suite's job).
        def oracle(inc_labels, exc_labels):
            n_inc, n_exc = len(inc_labels), len(exc_labels)
            met_inc = (
                inc_labels.count(EligibilityLabel.INCLUDED) / n_inc if n_inc else 0.0
            )
            unmet_inc = (
                inc_labels.count(EligibilityLabel.NOT_INCLUDED) / n_inc if n_inc else 0.0
            )
            met_exc = (
                exc_labels.count(EligibilityLabel.EXCLUDED) / n_exc if n_exc else 0.0
            )
            r = met_inc - met_exc
            e = (1.0 if unmet_inc > 0 else 0.0) + (1.0 if met_exc > 0 else 0.0) - met_inc
            return r, e

        def sequences(labels, max_len):
            for length in range(max_len + 1):
                yield from itertools.product(labels, repeat=length)

        for inc_labels in sequences(INCLUSION_LABELS, 3):
            for exc_labels in sequences(EXCLUSION_LABELS, 3):
                got = compute_scores(
                    inclusion_list(*inc_labels), exclusion_list(*exc_labels)
                )
                assert got == oracle(list(inc_labels), list(exc_labels))

    def test_permutation_invariance(self):
        labels = [
            EligibilityLabel.INCLUDED,
            EligibilityLabel.NOT_INCLUDED,
            EligibilityLabel.NO_RELEVANT_INFORMATION,
            EligibilityLabel.INCLUDED,
        ]
        scores = {
            compute_scores(inclusion_list(*perm), [])
            for perm in itertools.permutations(labels)
        }
        assert len(scores) == 1

    @given(
        inc=st.lists(st.sampled_from(INCLUSION_LABELS), max_size=6),
        exc=st.lists(st.sampled_from(EXCLUSION_LABELS), max_size=6),
    )
    @settings(max_examples=300)
    def test_bounds_property(self, inc, exc):
        rank_score, exclusion_score = compute_scores(
            inclusion_list(*inc), exclusion_list(*exc)
        )
        assert -1.0 <= rank_score <= 1.0
        assert -1.0 <= exclusion_score <= 2.0

    @given(
        inc=st.lists(st.sampled_from(INCLUSION_LABELS), min_size=1, max_size=6),
        exc=st.lists(st.sampled_from(EXCLUSION_LABELS), max_size=6),
        data=st.data(),
    )
    @settings(max_examples=200)
    def test_single_flip_monotonicity(self, inc, exc, data):
        flippable = [i for i, l in enumerate(inc) if l is EligibilityLabel.NOT_INCLUDED]
        if not flippable:
            return
        index = data.draw(st.sampled_from(flippable))
        before_r, before_e = compute_scores(inclusion_list(*inc), exclusion_list(*exc))
        flipped = list(inc)
        flipped[index] = EligibilityLabel.INCLUDED
        after_r, after_e = compute_scores(inclusion_list(*flipped), exclusion_list(*exc))
        assert after_r >= before_r
        assert after_e <= before_e


class TestRankTrials:
    def ta(self, trial_id, rank_score, patient_id="P1"):
        return build_assessment(
            patient_id,
            trial_id,
            inclusion_list(
                *(
                    [EligibilityLabel.INCLUDED] * int(round((rank_score + 1) * 2))
                    + [EligibilityLabel.NOT_INCLUDED] * int(round((1 - rank_score) * 2))
                )
            ),
            [],
        )

    def test_sort_and_tie_break(self):
        assessments = [self.ta("A", 0.5), self.ta("B", 1.0), self.ta("C", 0.5)]
        ranked = rank_trials("P1", assessments)
        assert [e.trial_id for e in ranked.entries] == ["B", "A", "C"]

    def test_empty(self):
        assert rank_trials("P1", []).entries == ()

    def test_mixed_patient_rejected(self):
        with pytest.raises(ValueError):
            rank_trials("P1", [self.ta("A", 0.5, patient_id="P2")])

    def test_failed_pairs_rank_last_by_trial_id(self):
        # the worst real score (-1.0) still beats a failed pair
        worst = build_assessment("P1", "B", [], exclusion_list(EligibilityLabel.EXCLUDED))
        assert worst.rank_score == -1.0
        failures = [
            PairFailure("P1", "Z", CriterionKind.INCLUSION, "exhausted"),
            PairFailure("P1", "A", CriterionKind.EXCLUSION, "exhausted"),
        ]
        ranked = rank_trials("P1", [worst], failures)
        assert [e.trial_id for e in ranked.entries] == ["B", "A", "Z"]
        assert ranked.entries[0].rank_score == -1.0
        assert ranked.entries[1].failed and ranked.entries[2].failed

    def test_brute_force_sort_oracle(self):
        rng = random.Random(13)
        assessments = []
        for i in range(20):
            n_met = rng.randint(0, 4)
            n_unmet = rng.randint(0, 4 - n_met)
            labels = [EligibilityLabel.INCLUDED] * n_met + [
                EligibilityLabel.NOT_INCLUDED
            ] * n_unmet
            if not labels:
                labels = [EligibilityLabel.NO_RELEVANT_INFORMATION]
            assessments.append(
                build_assessment("P1", f"T{i:02d}", inclusion_list(*labels), [])
            )
        ranked = rank_trials("P1", assessments)
        expected = sorted(assessments, key=lambda a: (-a.rank_score, a.trial_id))
        assert [e.trial_id for e in ranked.entries] == [a.trial_id for a in expected]

    def test_rank_all_groups_by_patient(self):
        assessments = [
            self.ta("A", 1.0, patient_id="P2"),
            self.ta("A", 1.0, patient_id="P1"),
        ]
        ranked = rank_all(assessments)
        assert [r.patient_id for r in ranked] == ["P1", "P2"]

    @given(
        numerators=st.lists(st.integers(min_value=-8, max_value=8), min_size=1, max_size=15),
        scale=st.sampled_from([0.25, 0.5, 1.0, 2.0, 4.0]),
        shift_quarters=st.integers(min_value=-16, max_value=16),
    )
    @settings(max_examples=150)
    def test_order_invariant_under_positive_affine_rescaling(
        self, numerators, scale, shift_quarters
    ):
        # dyadic values keep the affine map exact, so ties are preserved
        scores = [n / 8 for n in numerators]
        shift = shift_quarters / 4
        entries = [(s, f"T{i:02d}") for i, s in enumerate(scores)]
        base = sorted(entries, key=lambda e: (-e[0], e[1]))
        rescaled = sorted(entries, key=lambda e: (-(scale * e[0] + shift), e[1]))
        assert [e[1] for e in base] == [e[1] for e in rescaled]


def scripted_inclusion_response(labels):
    data = {
        f"criterion {i}": [f"reasoning {i}", [0], label.value] for i, label in enumerate(labels)
    }
    return f"```json\n{json.dumps(data)}\n```"


class TestAssessPair:
    def test_inclusion_only_all_met(self, tiny_note, tiny_trial):
        trial = replace(tiny_trial, exclusion_text="")
        backend = SequenceBackend(
            [scripted_inclusion_response([EligibilityLabel.INCLUDED] * 2)]
        )
        ta = assess_pair(tiny_note, trial, backend, GenerationConfig())
        assert len(ta.inclusion) == 2
        assert ta.exclusion == ()
        assert ta.rank_score == 1.0
        assert backend.calls == 1

    def test_both_kinds_scores_match_compute(self, tiny_note, tiny_trial):
        inclusion_response = scripted_inclusion_response(
            [EligibilityLabel.INCLUDED, EligibilityLabel.NOT_INCLUDED]
        )
        exclusion_payload = {
            "no anticoagulants": ["on warfarin", [2], "excluded"],
        }
        backend = SequenceBackend(
            [inclusion_response, f"```json\n{json.dumps(exclusion_payload)}\n```"]
        )
        ta = assess_pair(tiny_note, tiny_trial, backend, GenerationConfig())
        expected = compute_scores(list(ta.inclusion), list(ta.exclusion))
        assert (ta.rank_score, ta.exclusion_score) == expected
        assert ta.rank_score == pytest.approx(-0.5)

    def test_always_invalid_fails_pair(self, tiny_note, tiny_trial):
        backend = SequenceBackend(["junk"] * 10)
        with pytest.raises(PairAssessmentError) as excinfo:
            assess_pair(tiny_note, tiny_trial, backend, GenerationConfig())
        failure = excinfo.value.failure
        assert failure.patient_id == tiny_note.patient_id
        assert failure.trial_id == tiny_trial.trial_id
        assert backend.calls == 5

    def test_out_of_range_evidence_clamped_with_warning(self, tiny_note, tiny_trial, caplog):
        trial = replace(tiny_trial, exclusion_text="")
        payload = {"criterion": ["reasoning", [0, 7, -2], "included"]}
        backend = SequenceBackend([f"```json\n{json.dumps(payload)}\n```"])
        with caplog.at_level(logging.WARNING, logger="trialmatch.engine"):
            ta = assess_pair(tiny_note, trial, backend, GenerationConfig())
        assert ta.inclusion[0].evidence_ids == (0,)
        assert any("out-of-range evidence" in r.message for r in caplog.records)


class TestRunIO:
    def test_assessments_round_trip(self, tmp_path):
        ta = build_assessment(
            "P1",
            "T1",
            inclusion_list(EligibilityLabel.INCLUDED),
            exclusion_list(EligibilityLabel.NOT_EXCLUDED),
        )
        path = tmp_path / "assessments.jsonl"
        write_assessments(path, [ta])
        assert read_assessments(path) == [ta]

    def test_ranked_lists_round_trip(self, tmp_path):
        ranked = [
            RankedList("P1", (RankedEntry("T1", 0.5, 0.0), RankedEntry("T2", None, None))),
            RankedList("P2", (RankedEntry("T1", -1.0, 2.0),)),
        ]
        write_ranked_lists(tmp_path / "rankings", ranked)
        assert read_ranked_lists(tmp_path / "rankings") == ranked
