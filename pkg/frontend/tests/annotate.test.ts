import { describe, expect, it } from "vitest";

import {
  buildSubmission,
  canSubmit,
  missingFields,
  needsEvidenceConfirmation,
  newDraft,
  toggleEvidence,
  withErrorType,
  withLabel,
  withReasoningMode,
} from "../src/annotate.js";
import type { AnnotationTask } from "../src/types.js";

const task: AnnotationTask = {
  task_id: "ann-1",
  task_kind: "annotation",
  patient: {
    patient_id: "P001",
    sentences: ["Sentence zero.", "Sentence one.", "Sentence two."],
  },
  trial_summary: { trial_id: "T001", title: "Some trial" },
  criterion_text: "History of diabetes",
  kind: "inclusion",
  status: "pending",
};

describe("evidence selection", () => {
  it("toggles sentences on and off", () => {
    let draft = newDraft(task);
    draft = toggleEvidence(draft, 2);
    draft = toggleEvidence(draft, 0);
    expect([...draft.evidence].sort()).toEqual([0, 2]);
    draft = toggleEvidence(draft, 2);
    expect([...draft.evidence]).toEqual([0]);
  });

  it("ignores out-of-range sentence ids", () => {
    let draft = newDraft(task);
    draft = toggleEvidence(draft, 3);
    draft = toggleEvidence(draft, -1);
    expect(draft.evidence.size).toBe(0);
  });
});

describe("submission gating", () => {
  it("blocks until label and reasoning mode are chosen", () => {
    let draft = newDraft(task);
    expect(canSubmit(draft)).toBe(false);
    expect(missingFields(draft)).toEqual(["label", "reasoning mode"]);
    draft = withLabel(draft, "included");
    expect(canSubmit(draft)).toBe(false);
    draft = withReasoningMode(draft, "explicit");
    expect(canSubmit(draft)).toBe(true);
  });

  it("rejects kind-illegal labels outright", () => {
    const draft = newDraft(task);
    expect(() => withLabel(draft, "excluded")).toThrow(/illegal/);
  });

  it("never requires evidence, but asks for confirmation when it is empty", () => {
    let draft = withReasoningMode(withLabel(newDraft(task), "included"), "explicit");
    expect(canSubmit(draft)).toBe(true);
    expect(needsEvidenceConfirmation(draft)).toBe(true);
    draft = toggleEvidence(draft, 1);
    expect(needsEvidenceConfirmation(draft)).toBe(false);
  });

  it("treats empty evidence with no-relevant-information as unremarkable", () => {
    const draft = withReasoningMode(
      withLabel(newDraft(task), "no relevant information"),
      "implicit",
    );
    expect(needsEvidenceConfirmation(draft)).toBe(false);
  });
});

describe("submission body", () => {
  it("builds the wire format with sorted evidence ids", () => {
    let draft = newDraft(task);
    draft = toggleEvidence(draft, 2);
    draft = toggleEvidence(draft, 0);
    draft = withLabel(draft, "included");
    draft = withReasoningMode(draft, "explicit");
    draft = withErrorType(draft, "wrong_outcome");
    const body = buildSubmission(draft, "ann-user", new Date("2026-08-09T12:00:00Z"));
    expect(body).toEqual({
      annotation_id: "gold-ann-1",
      patient_id: "P001",
      trial_id: "T001",
      criterion_text: "History of diabetes",
      kind: "inclusion",
      gold_label: "included",
      gold_evidence_ids: [0, 2],
      reasoning_mode: "explicit",
      error_type: "wrong_outcome",
      annotator_id: "ann-user",
      timestamp: "2026-08-09T12:00:00.000Z",
    });
  });

  it("error type stays optional", () => {
    const draft = withReasoningMode(withLabel(newDraft(task), "not included"), "implicit");
    const body = buildSubmission(draft, "ann-user");
    expect(body.error_type).toBeNull();
  });

  it("refuses to build from an incomplete draft", () => {
    expect(() => buildSubmission(newDraft(task), "ann-user")).toThrow(/missing/);
  });
});
