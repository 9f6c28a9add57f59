"""Annotation and adjudication service: journal-backed store plus HTTP API.

Persistence is an append-only JSON-lines journal; replaying it reconstructs
the full service state, and corrections are last-write-wins keyed by
annotation id. Blind judgment tasks carry two anonymized outputs whose model
identities are stored server-side only and never appear in any response
before the verdict is submitted.

The HTTP API (no authentication; this is a deployment-local tool):
  GET  /tasks/next?kind=annotation|judgment   next pending task
  GET  /tasks/{id}
  POST /tasks/{id}/annotation
  POST /tasks/{id}/judgment                   body {"winner": "x"|"y"|"tie"}
  POST /tasks/{id}/skip
  GET  /export/annotations                    JSON-lines download
  GET  /patients/{id}
  GET  /progress
"""

from __future__ import annotations

import json
import random
import threading
import uuid
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .corpus import Corpus
from .model import (
    ALLOWED_LABELS,
    CriterionKind,
    EligibilityLabel,
    GoldCriterionAnnotation,
    PatientNote,
)
from .textmetrics import CriterionRow


class AnnotationServiceError(Exception):
    pass


class UnknownTaskError(AnnotationServiceError):
    pass


class StaleTaskError(AnnotationServiceError):
    """The task has already been completed or skipped."""


class InvalidSubmissionError(AnnotationServiceError):
    pass


class ImportError_(AnnotationServiceError):
    """A pool row references ids missing from the corpus."""


@dataclass(frozen=True)
class TrialSummary:
    trial_id: str
    title: str

    def to_dict(self) -> dict:
        return {"trial_id": self.trial_id, "title": self.title}


@dataclass(frozen=True)
class AnnotationTask:
    task_id: str
    patient: PatientNote
    trial_summary: TrialSummary
    criterion_text: str
    kind: CriterionKind
    status: str  # pending | done | skipped

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "task_kind": "annotation",
            "patient": self.patient.to_dict(),
            "trial_summary": self.trial_summary.to_dict(),
            "criterion_text": self.criterion_text,
            "kind": self.kind.value,
            "status": self.status,
        }


@dataclass(frozen=True)
class ModelOutput:
    explanation: str
    evidence_ids: tuple[int, ...]
    label: EligibilityLabel

    def to_dict(self) -> dict:
        return {
            "explanation": self.explanation,
            "evidence_ids": list(self.evidence_ids),
            "label": self.label.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelOutput":
        return cls(
            explanation=d["explanation"],
            evidence_ids=tuple(d["evidence_ids"]),
            label=EligibilityLabel.from_string(d["label"]),
        )


@dataclass(frozen=True)
class BlindJudgmentTask:
    """Two anonymized outputs for one criterion; the x/y mapping stays hidden.

    ``model_x``/``model_y`` are the unblinded names and must never be put in
    an API response before the verdict is stored.
    """

    task_id: str
    patient: PatientNote
    trial_summary: TrialSummary
    criterion_text: str
    kind: CriterionKind
    output_x: ModelOutput
    output_y: ModelOutput
    model_x: str
    model_y: str
    status: str  # pending | done

    def to_blinded_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "task_kind": "judgment",
            "patient": self.patient.to_dict(),
            "trial_summary": self.trial_summary.to_dict(),
            "criterion_text": self.criterion_text,
            "kind": self.kind.value,
            "output_x": self.output_x.to_dict(),
            "output_y": self.output_y.to_dict(),
            "status": self.status,
        }

    def to_journal_dict(self) -> dict:
        d = self.to_blinded_dict()
        d["model_x"] = self.model_x
        d["model_y"] = self.model_y
        return d


@dataclass(frozen=True)
class JudgmentVerdict:
    task_id: str
    winner: str  # x | y | tie
    winner_model: str | None
    model_x: str
    model_y: str
    submitted_at: str

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "winner": self.winner,
            "winner_model": self.winner_model,
            "model_x": self.model_x,
            "model_y": self.model_y,
            "submitted_at": self.submitted_at,
        }


def _task_key(patient_id: str, trial_id: str, kind: CriterionKind, criterion_text: str):
    return (patient_id, trial_id, kind.value, criterion_text.strip())


class AnnotationStore:
    """Event-sourced store for annotation and blind-judgment tasks.

    All writes append one event to the journal and mutate in-memory state the
    same way replay does; a single lock serializes writers while reads stay
    concurrent.
    """

    def __init__(self, journal_path: str | Path):
        self.journal_path = Path(journal_path)
        self._lock = threading.Lock()
        self.annotation_tasks: dict[str, AnnotationTask] = {}
        self.judgment_tasks: dict[str, BlindJudgmentTask] = {}
        self.annotations: dict[str, GoldCriterionAnnotation] = {}
        self.annotation_by_task: dict[str, str] = {}
        self.verdicts: dict[str, JudgmentVerdict] = {}
        self._task_order: list[str] = []
        self._judgment_order: list[str] = []
        if self.journal_path.exists():
            self._replay()

    # -- journal ------------------------------------------------------------

    def _append(self, event: str, payload: dict) -> None:
        record = {
            "event": event,
            "at": datetime.now(timezone.utc).isoformat(),
            "payload": payload,
        }
        with open(self.journal_path, "a", encoding="utf-8") as f:
            f.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")

    def _replay(self) -> None:
        with open(self.journal_path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                self._apply(record["event"], record["payload"])

    def _apply(self, event: str, payload: dict) -> None:
        if event == "annotation_task_imported":
            task = AnnotationTask(
                task_id=payload["task_id"],
                patient=PatientNote.from_dict(payload["patient"]),
                trial_summary=TrialSummary(**payload["trial_summary"]),
                criterion_text=payload["criterion_text"],
                kind=CriterionKind.from_string(payload["kind"]),
                status=payload["status"],
            )
            self.annotation_tasks[task.task_id] = task
            self._task_order.append(task.task_id)
        elif event == "judgment_task_imported":
            task = BlindJudgmentTask(
                task_id=payload["task_id"],
                patient=PatientNote.from_dict(payload["patient"]),
                trial_summary=TrialSummary(**payload["trial_summary"]),
                criterion_text=payload["criterion_text"],
                kind=CriterionKind.from_string(payload["kind"]),
                output_x=ModelOutput.from_dict(payload["output_x"]),
                output_y=ModelOutput.from_dict(payload["output_y"]),
                model_x=payload["model_x"],
                model_y=payload["model_y"],
                status=payload["status"],
            )
            self.judgment_tasks[task.task_id] = task
            self._judgment_order.append(task.task_id)
        elif event == "annotation_submitted":
            task_id = payload["task_id"]
            annotation = GoldCriterionAnnotation.from_dict(payload["annotation"])
            task = self.annotation_tasks[task_id]
            self.annotation_tasks[task_id] = AnnotationTask(
                task_id=task.task_id,
                patient=task.patient,
                trial_summary=task.trial_summary,
                criterion_text=task.criterion_text,
                kind=task.kind,
                status="done",
            )
            self.annotations[annotation.annotation_id] = annotation
            self.annotation_by_task[task_id] = annotation.annotation_id
        elif event == "task_skipped":
            task_id = payload["task_id"]
            task = self.annotation_tasks[task_id]
            self.annotation_tasks[task_id] = AnnotationTask(
                task_id=task.task_id,
                patient=task.patient,
                trial_summary=task.trial_summary,
                criterion_text=task.criterion_text,
                kind=task.kind,
                status="skipped",
            )
        elif event == "judgment_submitted":
            task_id = payload["task_id"]
            verdict = JudgmentVerdict(**payload["verdict"])
            task = self.judgment_tasks[task_id]
            self.judgment_tasks[task_id] = BlindJudgmentTask(
                task_id=task.task_id,
                patient=task.patient,
                trial_summary=task.trial_summary,
                criterion_text=task.criterion_text,
                kind=task.kind,
                output_x=task.output_x,
                output_y=task.output_y,
                model_x=task.model_x,
                model_y=task.model_y,
                status="done",
            )
            self.verdicts[task_id] = verdict
        else:
            raise AnnotationServiceError(f"unknown journal event {event!r}")

    def _record(self, event: str, payload: dict) -> None:
        self._apply(event, payload)
        self._append(event, payload)

    # -- imports ------------------------------------------------------------

    def import_tasks(self, final_pool: list[CriterionRow], corpus: Corpus) -> int:
        """Create one pending annotation task per pool row; idempotent.

        Re-imports dedupe on (patient, trial, kind, criterion text); rows
        referencing unknown ids abort the import with every offender listed.
        """
        patients = corpus.patients_by_id()
        trials = corpus.trials_by_id()
        offenders = []
        for row in final_pool:
            if row.patient_id not in patients:
                offenders.append(f"unknown patient {row.patient_id!r}")
            if row.trial_id not in trials:
                offenders.append(f"unknown trial {row.trial_id!r}")
        if offenders:
            raise ImportError_("; ".join(sorted(set(offenders))))
        with self._lock:
            existing = {
                _task_key(t.patient.patient_id, t.trial_summary.trial_id, t.kind, t.criterion_text)
                for t in self.annotation_tasks.values()
            }
            imported = 0
            for row in final_pool:
                key = _task_key(row.patient_id, row.trial_id, row.kind, row.criterion_text)
                if key in existing:
                    continue
                existing.add(key)
                trial = trials[row.trial_id]
                task = AnnotationTask(
                    task_id=f"ann-{uuid.uuid4().hex[:12]}",
                    patient=patients[row.patient_id],
                    trial_summary=TrialSummary(trial.trial_id, trial.title),
                    criterion_text=row.criterion_text.strip(),
                    kind=row.kind,
                    status="pending",
                )
                self._record("annotation_task_imported", task.to_dict())
                imported += 1
            return imported

    def import_judgment_tasks(
        self, contexts: list[dict], corpus: Corpus, seed: int | None = None
    ) -> int:
        """Create blind judgment tasks; the x/y assignment is random per task.

        Each context needs patient_id, trial_id, kind, criterion_text plus
        (model_a, output_a) and (model_b, output_b) dicts in ModelOutput shape.
        """
        patients = corpus.patients_by_id()
        trials = corpus.trials_by_id()
        rng = random.Random(seed)
        with self._lock:
            existing = {
                _task_key(t.patient.patient_id, t.trial_summary.trial_id, t.kind, t.criterion_text)
                for t in self.judgment_tasks.values()
            }
            imported = 0
            for ctx in contexts:
                kind = CriterionKind.from_string(ctx["kind"])
                key = _task_key(ctx["patient_id"], ctx["trial_id"], kind, ctx["criterion_text"])
                if key in existing:
                    continue
                existing.add(key)
                if ctx["patient_id"] not in patients:
                    raise ImportError_(f"unknown patient {ctx['patient_id']!r}")
                if ctx["trial_id"] not in trials:
                    raise ImportError_(f"unknown trial {ctx['trial_id']!r}")
                output_a = ModelOutput.from_dict(ctx["output_a"])
                output_b = ModelOutput.from_dict(ctx["output_b"])
                if rng.random() < 0.5:
                    x, y = (ctx["model_a"], output_a), (ctx["model_b"], output_b)
                else:
                    x, y = (ctx["model_b"], output_b), (ctx["model_a"], output_a)
                trial = trials[ctx["trial_id"]]
                task = BlindJudgmentTask(
                    task_id=f"jdg-{uuid.uuid4().hex[:12]}",
                    patient=patients[ctx["patient_id"]],
                    trial_summary=TrialSummary(trial.trial_id, trial.title),
                    criterion_text=ctx["criterion_text"].strip(),
                    kind=kind,
                    output_x=x[1],
                    output_y=y[1],
                    model_x=x[0],
                    model_y=y[0],
                    status="pending",
                )
                self._record("judgment_task_imported", task.to_journal_dict())
                imported += 1
            return imported

    # -- task access ---------------------------------------------------------

    def next_task(self, kind: str) -> AnnotationTask | BlindJudgmentTask | None:
        if kind == "annotation":
            for task_id in self._task_order:
                task = self.annotation_tasks[task_id]
                if task.status == "pending":
                    return task
            return None
        if kind == "judgment":
            for task_id in self._judgment_order:
                task = self.judgment_tasks[task_id]
                if task.status == "pending":
                    return task
            return None
        raise ValueError(f"unknown task kind {kind!r}")

    def get_task(self, task_id: str) -> AnnotationTask | BlindJudgmentTask:
        if task_id in self.annotation_tasks:
            return self.annotation_tasks[task_id]
        if task_id in self.judgment_tasks:
            return self.judgment_tasks[task_id]
        raise UnknownTaskError(task_id)

    def get_patient(self, patient_id: str) -> PatientNote:
        for task in self.annotation_tasks.values():
            if task.patient.patient_id == patient_id:
                return task.patient
        for task in self.judgment_tasks.values():
            if task.patient.patient_id == patient_id:
                return task.patient
        raise KeyError(patient_id)

    # -- submissions ----------------------------------------------------------

    def submit_annotation(
        self, task_id: str, annotation: GoldCriterionAnnotation
    ) -> GoldCriterionAnnotation:
        """Store a gold annotation for a pending task; last write wins per id."""
        with self._lock:
            task = self.annotation_tasks.get(task_id)
            if task is None:
                raise UnknownTaskError(task_id)
            if task.status != "pending":
                raise StaleTaskError(f"task {task_id} is {task.status}")
            problems = []
            if annotation.patient_id != task.patient.patient_id:
                problems.append("annotation patient_id does not match task")
            if annotation.trial_id != task.trial_summary.trial_id:
                problems.append("annotation trial_id does not match task")
            if annotation.kind is not task.kind:
                problems.append("annotation kind does not match task")
            if annotation.gold_label not in ALLOWED_LABELS[task.kind]:
                problems.append(
                    f"gold label {annotation.gold_label.value!r} illegal for "
                    f"{task.kind.value} criterion"
                )
            n = len(task.patient.sentences)
            bad = [i for i in annotation.gold_evidence_ids if not 0 <= i < n]
            if bad:
                problems.append(f"evidence ids out of range: {bad}")
            if problems:
                raise InvalidSubmissionError("; ".join(problems))
            self._record(
                "annotation_submitted",
                {"task_id": task_id, "annotation": annotation.to_dict()},
            )
            return annotation

    def skip_task(self, task_id: str) -> None:
        with self._lock:
            task = self.annotation_tasks.get(task_id)
            if task is None:
                raise UnknownTaskError(task_id)
            if task.status != "pending":
                raise StaleTaskError(f"task {task_id} is {task.status}")
            self._record("task_skipped", {"task_id": task_id})

    def submit_judgment(self, task_id: str, winner: str) -> JudgmentVerdict:
        """Store a blind verdict and return it unblinded."""
        if winner not in ("x", "y", "tie"):
            raise InvalidSubmissionError(f"winner must be 'x', 'y' or 'tie', got {winner!r}")
        with self._lock:
            task = self.judgment_tasks.get(task_id)
            if task is None:
                raise UnknownTaskError(task_id)
            if task.status != "pending":
                raise StaleTaskError(f"task {task_id} already judged")
            winner_model = {"x": task.model_x, "y": task.model_y, "tie": None}[winner]
            verdict = JudgmentVerdict(
                task_id=task_id,
                winner=winner,
                winner_model=winner_model,
                model_x=task.model_x,
                model_y=task.model_y,
                submitted_at=datetime.now(timezone.utc).isoformat(),
            )
            self._record("judgment_submitted", {"task_id": task_id, "verdict": verdict.to_dict()})
            return verdict

    # -- exports ----------------------------------------------------------------

    def export_annotations(self, path: str | Path) -> int:
        """Write all stored annotations as JSON-lines; returns the line count."""
        annotations = [
            self.annotations[self.annotation_by_task[task_id]]
            for task_id in self._task_order
            if task_id in self.annotation_by_task
        ]
        with open(path, "w", encoding="utf-8") as f:
            for a in annotations:
                f.write(json.dumps(a.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")
        return len(annotations)

    def export_annotations_text(self) -> str:
        lines = [
            json.dumps(
                self.annotations[self.annotation_by_task[task_id]].to_dict(),
                ensure_ascii=False,
                sort_keys=True,
            )
            for task_id in self._task_order
            if task_id in self.annotation_by_task
        ]
        return "".join(line + "\n" for line in lines)

    def progress(self) -> dict:
        def count(tasks, status):
            return sum(1 for t in tasks.values() if t.status == status)

        return {
            "annotation": {
                "pending": count(self.annotation_tasks, "pending"),
                "done": count(self.annotation_tasks, "done"),
                "skipped": count(self.annotation_tasks, "skipped"),
                "total": len(self.annotation_tasks),
            },
            "judgment": {
                "pending": count(self.judgment_tasks, "pending"),
                "done": count(self.judgment_tasks, "done"),
                "total": len(self.judgment_tasks),
            },
        }


def disagreement_contexts(
    assessments_a: list,
    assessments_b: list,
    model_a: str,
    model_b: str,
    threshold: float = 0.9,
) -> list[dict]:
    """Build judgment-task contexts from two runs' criterion disagreements.

    Criteria are aligned across models within each (patient, trial, kind) by
    text similarity; aligned criteria whose labels differ become blind
    judgment candidates.
    """
    from .textmetrics import align_criterion

    def flatten(assessments):
        flat = {}
        for ta in assessments:
            for a in list(ta.inclusion) + list(ta.exclusion):
                flat.setdefault((ta.patient_id, ta.trial_id, a.kind), []).append(a)
        return flat

    flat_a = flatten(assessments_a)
    flat_b = flatten(assessments_b)
    contexts = []
    for key in sorted(flat_a.keys() & flat_b.keys(), key=lambda k: (k[0], k[1], k[2].value)):
        patient_id, trial_id, kind = key
        b_texts = [a.criterion_text for a in flat_b[key]]
        for a in flat_a[key]:
            index = align_criterion(a.criterion_text, b_texts, threshold)
            if index is None:
                continue
            b = flat_b[key][index]
            if a.label is b.label:
                continue
            contexts.append(
                {
                    "patient_id": patient_id,
                    "trial_id": trial_id,
                    "kind": kind.value,
                    "criterion_text": a.criterion_text,
                    "model_a": model_a,
                    "output_a": {
                        "explanation": a.explanation,
                        "evidence_ids": list(a.evidence_ids),
                        "label": a.label.value,
                    },
                    "model_b": model_b,
                    "output_b": {
                        "explanation": b.explanation,
                        "evidence_ids": list(b.evidence_ids),
                        "label": b.label.value,
                    },
                }
            )
    return contexts


def overrides_from_verdicts(
    store: AnnotationStore,
    gold: list[GoldCriterionAnnotation],
    model_a: str,
    model_b: str,
    threshold: float = 0.9,
) -> dict[str, str]:
    """Map stored human verdicts onto gold annotation ids for head-to-head.

    Each judged task is aligned to a gold annotation in its (patient, trial,
    kind) by criterion-text similarity; the verdict becomes 'a', 'b' or 'tie'
    according to the unblinded winner. Verdicts naming neither model are
    ignored.
    """
    from .textmetrics import align_criterion

    gold_by_context: dict[tuple[str, str, str], list[GoldCriterionAnnotation]] = {}
    for annotation in gold:
        key = (annotation.patient_id, annotation.trial_id, annotation.kind.value)
        gold_by_context.setdefault(key, []).append(annotation)
    overrides: dict[str, str] = {}
    for task_id, verdict in store.verdicts.items():
        task = store.judgment_tasks.get(task_id)
        if task is None:
            continue
        key = (task.patient.patient_id, task.trial_summary.trial_id, task.kind.value)
        candidates = gold_by_context.get(key, [])
        index = align_criterion(
            task.criterion_text, [g.criterion_text for g in candidates], threshold
        )
        if index is None:
            continue
        if verdict.winner == "tie":
            outcome = "tie"
        elif verdict.winner_model == model_a:
            outcome = "a"
        elif verdict.winner_model == model_b:
            outcome = "b"
        else:
            continue
        overrides[candidates[index].annotation_id] = outcome
    return overrides


def create_app(store: AnnotationStore):
    """Build the FastAPI application over a store."""
    from fastapi import FastAPI, HTTPException
    from fastapi.responses import PlainTextResponse

    app = FastAPI(title="trialmatch annotation service")

    def task_response(task) -> dict:
        if isinstance(task, BlindJudgmentTask):
            return task.to_blinded_dict()
        return task.to_dict()

    @app.get("/tasks/next")
    def tasks_next(kind: str = "annotation"):
        try:
            task = store.next_task(kind)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        if task is None:
            raise HTTPException(status_code=404, detail=f"no pending {kind} task")
        return task_response(task)

    @app.get("/tasks/{task_id}")
    def tasks_get(task_id: str):
        try:
            return task_response(store.get_task(task_id))
        except UnknownTaskError:
            raise HTTPException(status_code=404, detail=f"unknown task {task_id}")

    @app.post("/tasks/{task_id}/annotation")
    def tasks_annotate(task_id: str, body: dict):
        try:
            annotation = GoldCriterionAnnotation.from_dict(body)
        except (KeyError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=f"bad annotation body: {exc}")
        try:
            stored = store.submit_annotation(task_id, annotation)
        except UnknownTaskError:
            raise HTTPException(status_code=404, detail=f"unknown task {task_id}")
        except StaleTaskError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except InvalidSubmissionError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return {"stored": stored.to_dict()}

    @app.post("/tasks/{task_id}/judgment")
    def tasks_judge(task_id: str, body: dict):
        winner = body.get("winner", "")
        try:
            verdict = store.submit_judgment(task_id, winner)
        except UnknownTaskError:
            raise HTTPException(status_code=404, detail=f"unknown task {task_id}")
        except StaleTaskError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except InvalidSubmissionError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return {"verdict": verdict.to_dict()}

    @app.post("/tasks/{task_id}/skip")
    def tasks_skip(task_id: str):
        try:
            store.skip_task(task_id)
        except UnknownTaskError:
            raise HTTPException(status_code=404, detail=f"unknown task {task_id}")
        except StaleTaskError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return {"status": "skipped"}

    @app.get("/export/annotations", response_class=PlainTextResponse)
    def export_annotations():
        return store.export_annotations_text()

    @app.get("/patients/{patient_id}")
    def patients_get(patient_id: str):
        try:
            return store.get_patient(patient_id).to_dict()
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown patient {patient_id}")

    @app.get("/progress")
    def progress():
        return store.progress()

    return app
