/**
 * Annotation drafting state: evidence toggles, label/mode/error selection,
 * submission gating and body construction.
 *
 * The draft is immutable; every interaction returns a new draft. Submission
 * is blocked until both a label and a reasoning mode are chosen. Empty
 * evidence is always legal, but when the label is anything other than
 * "no relevant information" the UI must ask for confirmation first.
 */

import { isLegalLabel } from "./labels.js";
import type {
  AnnotationBody,
  AnnotationTask,
  EligibilityLabel,
  ErrorTypeTag,
  ReasoningMode,
} from "./types.js";

export interface AnnotationDraft {
  readonly task: AnnotationTask;
  readonly evidence: ReadonlySet<number>;
  readonly label: EligibilityLabel | null;
  readonly reasoningMode: ReasoningMode | null;
  readonly errorType: ErrorTypeTag | null;
}

export function newDraft(task: AnnotationTask): AnnotationDraft {
  return { task, evidence: new Set(), label: null, reasoningMode: null, errorType: null };
}

export function toggleEvidence(draft: AnnotationDraft, sentenceId: number): AnnotationDraft {
  if (sentenceId < 0 || sentenceId >= draft.task.patient.sentences.length) {
    return draft;
  }
  const evidence = new Set(draft.evidence);
  if (evidence.has(sentenceId)) {
    evidence.delete(sentenceId);
  } else {
    evidence.add(sentenceId);
  }
  return { ...draft, evidence };
}

export function withLabel(draft: AnnotationDraft, label: EligibilityLabel): AnnotationDraft {
  if (!isLegalLabel(draft.task.kind, label)) {
    throw new Error(`label ${label} is illegal for ${draft.task.kind} criteria`);
  }
  return { ...draft, label };
}

export function withReasoningMode(draft: AnnotationDraft, mode: ReasoningMode): AnnotationDraft {
  return { ...draft, reasoningMode: mode };
}

export function withErrorType(
  draft: AnnotationDraft,
  errorType: ErrorTypeTag | null,
): AnnotationDraft {
  return { ...draft, errorType };
}

/** Human-readable names of the required fields still missing. */
export function missingFields(draft: AnnotationDraft): string[] {
  const missing: string[] = [];
  if (draft.label === null) missing.push("label");
  if (draft.reasoningMode === null) missing.push("reasoning mode");
  return missing;
}

export function canSubmit(draft: AnnotationDraft): boolean {
  return missingFields(draft).length === 0;
}

/** True when submitting now should first show the empty-evidence dialog. */
export function needsEvidenceConfirmation(draft: AnnotationDraft): boolean {
  return draft.evidence.size === 0 && draft.label !== null && draft.label !== "no relevant information";
}

export function buildSubmission(
  draft: AnnotationDraft,
  annotatorId: string,
  now: Date = new Date(),
): AnnotationBody {
  if (!canSubmit(draft)) {
    throw new Error(`draft incomplete: missing ${missingFields(draft).join(", ")}`);
  }
  return {
    annotation_id: `gold-${draft.task.task_id}`,
    patient_id: draft.task.patient.patient_id,
    trial_id: draft.task.trial_summary.trial_id,
    criterion_text: draft.task.criterion_text,
    kind: draft.task.kind,
    gold_label: draft.label as EligibilityLabel,
    gold_evidence_ids: [...draft.evidence].sort((a, b) => a - b),
    reasoning_mode: draft.reasoningMode as ReasoningMode,
    error_type: draft.errorType,
    annotator_id: annotatorId,
    timestamp: now.toISOString(),
  };
}
