/**
 * Wire types for the annotation service HTTP API.
 *
 * These mirror the JSON the service emits exactly; blinded judgment tasks
 * deliberately carry no model identifiers before a verdict is submitted.
 */

export type CriterionKind = "inclusion" | "exclusion";

export type EligibilityLabel =
  | "included"
  | "not included"
  | "excluded"
  | "not excluded"
  | "no relevant information";

export type ReasoningMode = "explicit" | "implicit";

export type ErrorTypeTag =
  | "implicit_failure"
  | "lack_of_information"
  | "wrong_outcome"
  | "explanation_output_mismatch"
  | "expert_opinion_needed"
  | "negated_criteria";

export interface PatientView {
  patient_id: string;
  sentences: string[];
}

export interface TrialSummaryView {
  trial_id: string;
  title: string;
}

export interface AnnotationTask {
  task_id: string;
  task_kind: "annotation";
  patient: PatientView;
  trial_summary: TrialSummaryView;
  criterion_text: string;
  kind: CriterionKind;
  status: "pending" | "done" | "skipped";
}

export interface ModelOutputView {
  explanation: string;
  evidence_ids: number[];
  label: EligibilityLabel;
}

export interface BlindJudgmentTask {
  task_id: string;
  task_kind: "judgment";
  patient: PatientView;
  trial_summary: TrialSummaryView;
  criterion_text: string;
  kind: CriterionKind;
  output_x: ModelOutputView;
  output_y: ModelOutputView;
  status: "pending" | "done";
}

export interface AnnotationBody {
  annotation_id: string;
  patient_id: string;
  trial_id: string;
  criterion_text: string;
  kind: CriterionKind;
  gold_label: EligibilityLabel;
  gold_evidence_ids: number[];
  reasoning_mode: ReasoningMode;
  error_type: ErrorTypeTag | null;
  annotator_id: string;
  timestamp: string;
}

export type Winner = "x" | "y" | "tie";

export interface JudgmentVerdict {
  task_id: string;
  winner: Winner;
  winner_model: string | null;
  model_x: string;
  model_y: string;
  submitted_at: string;
}

export interface ProgressCounts {
  annotation: { pending: number; done: number; skipped: number; total: number };
  judgment: { pending: number; done: number; total: number };
}
