/** Label vocabularies and the kind-legality rule the pickers enforce. */

import type { CriterionKind, EligibilityLabel, ErrorTypeTag } from "./types.js";

// Inclusion criteria may only be judged included / not included / no relevant
// information; exclusion criteria excluded / not excluded / no relevant
// information. The picker must never offer anything else.
export const LEGAL_LABELS: Record<CriterionKind, readonly EligibilityLabel[]> = {
  inclusion: ["included", "not included", "no relevant information"],
  exclusion: ["excluded", "not excluded", "no relevant information"],
};

export function legalLabels(kind: CriterionKind): readonly EligibilityLabel[] {
  return LEGAL_LABELS[kind];
}

export function isLegalLabel(kind: CriterionKind, label: EligibilityLabel): boolean {
  return LEGAL_LABELS[kind].includes(label);
}

export const ERROR_TYPES: readonly { value: ErrorTypeTag; label: string }[] = [
  { value: "implicit_failure", label: "Implicit failure" },
  { value: "lack_of_information", label: "Lack of information" },
  { value: "wrong_outcome", label: "Wrong outcome" },
  { value: "explanation_output_mismatch", label: "Explanation-output mismatch" },
  { value: "expert_opinion_needed", label: "Expert opinion needed" },
  { value: "negated_criteria", label: "Negated criteria" },
];
