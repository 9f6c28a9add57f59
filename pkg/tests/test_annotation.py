import json
from datetime import datetime, timezone

import pytest
from fastapi.testclient import TestClient

from trialmatch.annotation import (
    AnnotationStore,
    ImportError_,
    InvalidSubmissionError,
    StaleTaskError,
    UnknownTaskError,
    create_app,
    disagreement_contexts,
)
from trialmatch.corpus import Corpus
from trialmatch.engine import build_assessment
from trialmatch.evalmetrics import criterion_eval
from trialmatch.model import (
    ClinicalTrial,
    CriterionAssessment,
    CriterionKind,
    EligibilityLabel,
    GoldCriterionAnnotation,
    PatientNote,
    ReasoningMode,
)
from trialmatch.textmetrics import CriterionRow


@pytest.fixture()
def corpus(tiny_note, tiny_trial):
    return Corpus((tiny_note,), (tiny_trial,), ())


@pytest.fixture()
def store(tmp_path):
    return AnnotationStore(tmp_path / "journal.jsonl")


def pool_row(text="History of diabetes", kind=CriterionKind.INCLUSION):
    return CriterionRow(
        criterion_text=text,
        predicted_label=EligibilityLabel.INCLUDED,
        patient_id="P001",
        trial_id="T001",
        kind=kind,
    )


def make_annotation(task, label=EligibilityLabel.INCLUDED, annotation_id="a1"):
    return GoldCriterionAnnotation(
        annotation_id=annotation_id,
        patient_id=task.patient.patient_id,
        trial_id=task.trial_summary.trial_id,
        criterion_text=task.criterion_text,
        kind=task.kind,
        gold_label=label,
        gold_evidence_ids=(1,),
        reasoning_mode=ReasoningMode.EXPLICIT,
        annotator_id="ann-1",
        timestamp=datetime(2026, 2, 1, tzinfo=timezone.utc),
    )


def judgment_context(criterion="History of diabetes"):
    return {
        "patient_id": "P001",
        "trial_id": "T001",
        "kind": "inclusion",
        "criterion_text": criterion,
        "model_a": "model-alpha",
        "output_a": {"explanation": "a says yes", "evidence_ids": [1], "label": "included"},
        "model_b": "model-beta",
        "output_b": {"explanation": "b says no", "evidence_ids": [], "label": "not included"},
    }


class TestImportTasks:
    def test_import_counts(self, store, corpus):
        rows = [pool_row(f"criterion variant {i}") for i in range(5)]
        assert store.import_tasks(rows, corpus) == 5
        assert store.progress()["annotation"]["pending"] == 5

    def test_reimport_is_idempotent(self, store, corpus):
        rows = [pool_row()]
        assert store.import_tasks(rows, corpus) == 1
        assert store.import_tasks(rows, corpus) == 0
        assert store.progress()["annotation"]["total"] == 1

    def test_unknown_patient_errors_with_id(self, store, corpus):
        bad = CriterionRow(
            criterion_text="c",
            predicted_label=EligibilityLabel.INCLUDED,
            patient_id="P999",
            trial_id="T001",
            kind=CriterionKind.INCLUSION,
        )
        with pytest.raises(ImportError_) as excinfo:
            store.import_tasks([bad], corpus)
        assert "P999" in str(excinfo.value)


class TestSubmitAnnotation:
    def test_happy_path(self, store, corpus):
        store.import_tasks([pool_row()], corpus)
        task = store.next_task("annotation")
        stored = store.submit_annotation(task.task_id, make_annotation(task))
        assert stored.annotation_id == "a1"
        assert store.get_task(task.task_id).status == "done"
        assert store.next_task("annotation") is None

    def test_kind_restriction_rejected(self, store, corpus):
        store.import_tasks([pool_row()], corpus)
        task = store.next_task("annotation")
        bad = make_annotation(task, label=EligibilityLabel.EXCLUDED)
        with pytest.raises(InvalidSubmissionError):
            store.submit_annotation(task.task_id, bad)

    def test_stale_task_rejected(self, store, corpus):
        store.import_tasks([pool_row()], corpus)
        task = store.next_task("annotation")
        store.submit_annotation(task.task_id, make_annotation(task))
        with pytest.raises(StaleTaskError):
            store.submit_annotation(task.task_id, make_annotation(task, annotation_id="a2"))

    def test_nonexistent_task(self, store):
        with pytest.raises(UnknownTaskError):
            store.skip_task("missing")

    def test_last_write_wins_on_annotation_id(self, store, corpus):
        store.import_tasks([pool_row(), pool_row("other criterion")], corpus)
        first = store.next_task("annotation")
        store.submit_annotation(first.task_id, make_annotation(first, annotation_id="a1"))
        second = store.next_task("annotation")
        correction = make_annotation(second, annotation_id="a1")
        store.submit_annotation(second.task_id, correction)
        assert store.annotations["a1"].criterion_text == second.criterion_text

    def test_out_of_range_evidence_rejected(self, store, corpus):
        store.import_tasks([pool_row()], corpus)
        task = store.next_task("annotation")
        bad = GoldCriterionAnnotation(
            annotation_id="a9",
            patient_id=task.patient.patient_id,
            trial_id=task.trial_summary.trial_id,
            criterion_text=task.criterion_text,
            kind=task.kind,
            gold_label=EligibilityLabel.INCLUDED,
            gold_evidence_ids=(99,),
            reasoning_mode=ReasoningMode.EXPLICIT,
            annotator_id="ann-1",
            timestamp=datetime(2026, 2, 1, tzinfo=timezone.utc),
        )
        with pytest.raises(InvalidSubmissionError):
            store.submit_annotation(task.task_id, bad)

    def test_skip_transitions(self, store, corpus):
        store.import_tasks([pool_row()], corpus)
        task = store.next_task("annotation")
        store.skip_task(task.task_id)
        progress = store.progress()["annotation"]
        assert progress == {"pending": 0, "done": 0, "skipped": 1, "total": 1}


class TestJudgments:
    def test_blind_mapping_and_unblinding(self, store, corpus):
        store.import_judgment_tasks([judgment_context()], corpus, seed=4)
        task = store.next_task("judgment")
        verdict = store.submit_judgment(task.task_id, "x")
        assert verdict.winner_model == task.model_x
        assert verdict.winner_model in ("model-alpha", "model-beta")

    def test_tie_recorded(self, store, corpus):
        store.import_judgment_tasks([judgment_context()], corpus, seed=4)
        task = store.next_task("judgment")
        verdict = store.submit_judgment(task.task_id, "tie")
        assert verdict.winner == "tie"
        assert verdict.winner_model is None

    def test_double_submit_rejected(self, store, corpus):
        store.import_judgment_tasks([judgment_context()], corpus, seed=4)
        task = store.next_task("judgment")
        store.submit_judgment(task.task_id, "y")
        with pytest.raises(StaleTaskError):
            store.submit_judgment(task.task_id, "x")

    def test_mapping_uniform_over_seeds(self, tmp_path, corpus):
        sides = set()
        for seed in range(20):
            store = AnnotationStore(tmp_path / f"journal-{seed}.jsonl")
            store.import_judgment_tasks([judgment_context()], corpus, seed=seed)
            task = store.next_task("judgment")
            sides.add(task.model_x)
        assert sides == {"model-alpha", "model-beta"}


class TestJournalReplay:
    def test_replay_reconstructs_state(self, tmp_path, corpus):
        journal = tmp_path / "journal.jsonl"
        store = AnnotationStore(journal)
        store.import_tasks([pool_row(), pool_row("second criterion")], corpus)
        store.import_judgment_tasks([judgment_context()], corpus, seed=1)
        task = store.next_task("annotation")
        store.submit_annotation(task.task_id, make_annotation(task))
        judgment = store.next_task("judgment")
        store.submit_judgment(judgment.task_id, "y")
        store.skip_task(store.next_task("annotation").task_id)

        replayed = AnnotationStore(journal)
        assert replayed.progress() == store.progress()
        assert replayed.annotations == store.annotations
        assert replayed.verdicts == store.verdicts
        assert {t.task_id for t in replayed.annotation_tasks.values()} == {
            t.task_id for t in store.annotation_tasks.values()
        }

    def test_export_round_trips_into_criterion_eval(self, tmp_path, store, corpus):
        store.import_tasks([pool_row()], corpus)
        task = store.next_task("annotation")
        store.submit_annotation(task.task_id, make_annotation(task))
        out = tmp_path / "annotations.jsonl"
        assert store.export_annotations(out) == 1

        from trialmatch.corpus import load_annotations

        annotations = load_annotations(out)
        predictions = [
            build_assessment(
                "P001",
                "T001",
                [
                    CriterionAssessment(
                        "History of diabetes",
                        CriterionKind.INCLUSION,
                        "explained",
                        (1,),
                        EligibilityLabel.INCLUDED,
                    )
                ],
                [],
            )
        ]
        result = criterion_eval(predictions, annotations)
        assert result.overall_cla == 1.0
        assert result.n_matched == 1


class TestHttpApi:
    @pytest.fixture()
    def client(self, store, corpus):
        store.import_tasks([pool_row()], corpus)
        store.import_judgment_tasks([judgment_context("Other criterion")], corpus, seed=2)
        return TestClient(create_app(store))

    def test_next_task_and_get(self, client):
        response = client.get("/tasks/next", params={"kind": "annotation"})
        assert response.status_code == 200
        task = response.json()
        assert task["status"] == "pending"
        assert client.get(f"/tasks/{task['task_id']}").status_code == 200

    def test_annotation_submission_flow(self, client):
        task = client.get("/tasks/next", params={"kind": "annotation"}).json()
        body = {
            "annotation_id": "a1",
            "patient_id": task["patient"]["patient_id"],
            "trial_id": task["trial_summary"]["trial_id"],
            "criterion_text": task["criterion_text"],
            "kind": task["kind"],
            "gold_label": "included",
            "gold_evidence_ids": [1, 2],
            "reasoning_mode": "explicit",
            "error_type": None,
            "annotator_id": "ann-1",
            "timestamp": "2026-02-01T00:00:00+00:00",
        }
        response = client.post(f"/tasks/{task['task_id']}/annotation", json=body)
        assert response.status_code == 200
        assert response.json()["stored"]["gold_evidence_ids"] == [1, 2]
        # a second submit conflicts
        assert client.post(f"/tasks/{task['task_id']}/annotation", json=body).status_code == 409

    def test_kind_illegal_label_rejected(self, client):
        task = client.get("/tasks/next", params={"kind": "annotation"}).json()
        body = {
            "annotation_id": "a1",
            "patient_id": task["patient"]["patient_id"],
            "trial_id": task["trial_summary"]["trial_id"],
            "criterion_text": task["criterion_text"],
            "kind": task["kind"],
            "gold_label": "excluded",
            "gold_evidence_ids": [],
            "reasoning_mode": "explicit",
            "error_type": None,
            "annotator_id": "ann-1",
            "timestamp": "2026-02-01T00:00:00+00:00",
        }
        response = client.post(f"/tasks/{task['task_id']}/annotation", json=body)
        assert response.status_code == 422

    def test_blind_task_responses_hide_model_names(self, client):
        response = client.get("/tasks/next", params={"kind": "judgment"})
        text = response.text
        assert "model-alpha" not in text
        assert "model-beta" not in text
        assert "model_x" not in response.json()
        task_id = response.json()["task_id"]
        direct = client.get(f"/tasks/{task_id}")
        assert "model-alpha" not in direct.text and "model-beta" not in direct.text

    def test_judgment_unblinds_after_submission(self, client):
        task = client.get("/tasks/next", params={"kind": "judgment"}).json()
        response = client.post(f"/tasks/{task['task_id']}/judgment", json={"winner": "x"})
        assert response.status_code == 200
        verdict = response.json()["verdict"]
        assert verdict["winner_model"] in ("model-alpha", "model-beta")
        assert {verdict["model_x"], verdict["model_y"]} == {"model-alpha", "model-beta"}

    def test_export_and_progress_endpoints(self, client):
        progress = client.get("/progress").json()
        assert progress["annotation"]["pending"] == 1
        assert progress["judgment"]["pending"] == 1
        export = client.get("/export/annotations")
        assert export.status_code == 200
        assert export.text == ""

    def test_patient_endpoint(self, client):
        response = client.get("/patients/P001")
        assert response.status_code == 200
        assert response.json()["patient_id"] == "P001"
        assert client.get("/patients/NOPE").status_code == 404

    def test_unknown_task_404(self, client):
        assert client.get("/tasks/zzz").status_code == 404
        assert client.post("/tasks/zzz/judgment", json={"winner": "x"}).status_code == 404

    def test_bad_winner_rejected(self, client):
        task = client.get("/tasks/next", params={"kind": "judgment"}).json()
        response = client.post(f"/tasks/{task['task_id']}/judgment", json={"winner": "z"})
        assert response.status_code == 422


class TestVerdictOverrides:
    def test_verdicts_map_to_gold_annotation_ids(self, store, corpus):
        from trialmatch.annotation import overrides_from_verdicts

        store.import_judgment_tasks([judgment_context()], corpus, seed=4)
        task = store.next_task("judgment")
        verdict = store.submit_judgment(task.task_id, "x")
        annotations = [
            GoldCriterionAnnotation(
                annotation_id="g1",
                patient_id="P001",
                trial_id="T001",
                criterion_text="History of diabetes",
                kind=CriterionKind.INCLUSION,
                gold_label=EligibilityLabel.INCLUDED,
                gold_evidence_ids=(1,),
                reasoning_mode=ReasoningMode.EXPLICIT,
                annotator_id="ann-1",
                timestamp=datetime(2026, 2, 1, tzinfo=timezone.utc),
            )
        ]
        overrides = overrides_from_verdicts(store, annotations, "model-alpha", "model-beta")
        expected = "a" if verdict.winner_model == "model-alpha" else "b"
        assert overrides == {"g1": expected}

    def test_tie_verdict_maps_to_tie(self, store, corpus):
        from trialmatch.annotation import overrides_from_verdicts

        store.import_judgment_tasks([judgment_context()], corpus, seed=4)
        task = store.next_task("judgment")
        store.submit_judgment(task.task_id, "tie")
        annotations = [
            GoldCriterionAnnotation(
                annotation_id="g1",
                patient_id="P001",
                trial_id="T001",
                criterion_text="History of diabetes",
                kind=CriterionKind.INCLUSION,
                gold_label=EligibilityLabel.INCLUDED,
                gold_evidence_ids=(),
                reasoning_mode=ReasoningMode.EXPLICIT,
                annotator_id="ann-1",
                timestamp=datetime(2026, 2, 1, tzinfo=timezone.utc),
            )
        ]
        overrides = overrides_from_verdicts(store, annotations, "model-alpha", "model-beta")
        assert overrides == {"g1": "tie"}

    def test_unrelated_gold_not_overridden(self, store, corpus):
        from trialmatch.annotation import overrides_from_verdicts

        store.import_judgment_tasks([judgment_context()], corpus, seed=4)
        task = store.next_task("judgment")
        store.submit_judgment(task.task_id, "x")
        annotations = [
            GoldCriterionAnnotation(
                annotation_id="g1",
                patient_id="P001",
                trial_id="T001",
                criterion_text="completely different criterion text",
                kind=CriterionKind.INCLUSION,
                gold_label=EligibilityLabel.INCLUDED,
                gold_evidence_ids=(),
                reasoning_mode=ReasoningMode.EXPLICIT,
                annotator_id="ann-1",
                timestamp=datetime(2026, 2, 1, tzinfo=timezone.utc),
            )
        ]
        assert overrides_from_verdicts(store, annotations, "model-alpha", "model-beta") == {}


class TestDisagreementContexts:
    def test_builds_contexts_for_label_disagreements(self):
        def one(label):
            return build_assessment(
                "P1",
                "T1",
                [
                    CriterionAssessment(
                        "criterion text", CriterionKind.INCLUSION, "why", (0,), label
                    )
                ],
                [],
            )

        contexts = disagreement_contexts(
            [one(EligibilityLabel.INCLUDED)],
            [one(EligibilityLabel.NOT_INCLUDED)],
            model_a="alpha",
            model_b="beta",
        )
        assert len(contexts) == 1
        assert contexts[0]["output_a"]["label"] == "included"
        assert contexts[0]["output_b"]["label"] == "not included"

    def test_agreement_produces_nothing(self):
        def one(label):
            return build_assessment(
                "P1",
                "T1",
                [
                    CriterionAssessment(
                        "criterion text", CriterionKind.INCLUSION, "why", (0,), label
                    )
                ],
                [],
            )

        assert (
            disagreement_contexts(
                [one(EligibilityLabel.INCLUDED)],
                [one(EligibilityLabel.INCLUDED)],
                "alpha",
                "beta",
            )
            == []
        )
