/**
 * DOM builders. Pure functions from state + callbacks to elements, so the
 * pieces are testable without the app shell: the sentence list maps one
 * highlight per sentence index, and the label picker can only ever contain
 * the kind's legal labels.
 */

import { ERROR_TYPES, legalLabels } from "./labels.js";
import type { AnnotationDraft } from "./annotate.js";
import type { JudgeState } from "./judge.js";
import type {
  CriterionKind,
  EligibilityLabel,
  ErrorTypeTag,
  ModelOutputView,
  PatientView,
  ProgressCounts,
  ReasoningMode,
  TrialSummaryView,
  Winner,
} from "./types.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderSentences(
  patient: PatientView,
  selected: ReadonlySet<number>,
  onToggle: (sentenceId: number) => void,
  highlightOnly: ReadonlySet<number> | null = null,
): HTMLOListElement {
  const list = el("ol", "sentences");
  list.start = 0;
  patient.sentences.forEach((sentence, index) => {
    const item = el("li", "sentence", sentence);
    item.dataset.sentenceId = String(index);
    if (selected.has(index)) item.classList.add("selected");
    if (highlightOnly?.has(index)) item.classList.add("cited");
    item.addEventListener("click", () => onToggle(index));
    list.appendChild(item);
  });
  return list;
}

export function renderCriterionPanel(
  criterionText: string,
  kind: CriterionKind,
  trial: TrialSummaryView,
): HTMLElement {
  const panel = el("section", "criterion-panel");
  panel.appendChild(el("div", "trial-title", `${trial.trial_id}: ${trial.title}`));
  panel.appendChild(el("div", `kind-badge kind-${kind}`, kind));
  panel.appendChild(el("blockquote", "criterion-text", criterionText));
  return panel;
}

export function renderLabelPicker(
  kind: CriterionKind,
  current: EligibilityLabel | null,
  onPick: (label: EligibilityLabel) => void,
): HTMLElement {
  const picker = el("div", "label-picker");
  for (const label of legalLabels(kind)) {
    const button = el("button", "label-option", label);
    button.type = "button";
    button.dataset.label = label;
    if (label === current) button.classList.add("active");
    button.addEventListener("click", () => onPick(label));
    picker.appendChild(button);
  }
  return picker;
}

export function renderReasoningToggle(
  current: ReasoningMode | null,
  onPick: (mode: ReasoningMode) => void,
): HTMLElement {
  const toggle = el("div", "reasoning-toggle");
  for (const mode of ["explicit", "implicit"] as const) {
    const button = el("button", "mode-option", mode);
    button.type = "button";
    button.dataset.mode = mode;
    if (mode === current) button.classList.add("active");
    button.addEventListener("click", () => onPick(mode));
    toggle.appendChild(button);
  }
  return toggle;
}

export function renderErrorTypePicker(
  current: ErrorTypeTag | null,
  onPick: (errorType: ErrorTypeTag | null) => void,
): HTMLSelectElement {
  const select = el("select", "error-type");
  const none = el("option", undefined, "no error type");
  none.value = "";
  select.appendChild(none);
  for (const { value, label } of ERROR_TYPES) {
    const option = el("option", undefined, label);
    option.value = value;
    if (value === current) option.selected = true;
    select.appendChild(option);
  }
  select.addEventListener("change", () => {
    onPick(select.value === "" ? null : (select.value as ErrorTypeTag));
  });
  return select;
}

export function renderProgress(progress: ProgressCounts): HTMLElement {
  const { pending, done, skipped, total } = progress.annotation;
  const bar = el("div", "progress");
  const fill = el("div", "progress-fill");
  const completed = done + skipped;
  fill.style.width = total === 0 ? "0%" : `${Math.round((completed / total) * 100)}%`;
  bar.appendChild(fill);
  bar.appendChild(
    el(
      "span",
      "progress-text",
      `${completed}/${total} annotated (${pending} pending), ` +
        `${progress.judgment.done}/${progress.judgment.total} judged`,
    ),
  );
  return bar;
}

export function renderSubmitBar(
  draft: AnnotationDraft,
  missing: string[],
  onSubmit: () => void,
  onSkip: () => void,
): HTMLElement {
  const bar = el("div", "submit-bar");
  const submit = el("button", "submit", "Submit annotation");
  submit.type = "button";
  submit.disabled = missing.length > 0;
  submit.addEventListener("click", onSubmit);
  bar.appendChild(submit);
  const skip = el("button", "skip", "Skip task");
  skip.type = "button";
  skip.addEventListener("click", onSkip);
  bar.appendChild(skip);
  if (missing.length > 0) {
    bar.appendChild(el("span", "missing-hint", `choose ${missing.join(" and ")} to submit`));
  }
  void draft;
  return bar;
}

export function renderModelOutput(
  side: "x" | "y",
  output: ModelOutputView,
): HTMLElement {
  const card = el("section", `model-output output-${side}`);
  card.appendChild(el("h3", undefined, `Output ${side.toUpperCase()}`));
  card.appendChild(el("div", "output-label", output.label));
  card.appendChild(el("p", "output-explanation", output.explanation));
  card.appendChild(
    el("div", "output-evidence", `evidence: ${output.evidence_ids.join(", ") || "none"}`),
  );
  return card;
}

export function renderJudgmentControls(
  state: JudgeState,
  onChoose: (winner: Winner) => void,
  onSubmit: () => void,
): HTMLElement {
  const controls = el("div", "judgment-controls");
  for (const winner of ["x", "y", "tie"] as const) {
    const button = el("button", "winner-option", winner === "tie" ? "Tie" : `${winner.toUpperCase()} wins`);
    button.type = "button";
    button.dataset.winner = winner;
    button.disabled = state.submitted;
    if (state.choice === winner) button.classList.add("active");
    button.addEventListener("click", () => onChoose(winner));
    controls.appendChild(button);
  }
  const submit = el("button", "submit", "Submit verdict");
  submit.type = "button";
  submit.disabled = state.choice === null || state.submitted;
  submit.addEventListener("click", onSubmit);
  controls.appendChild(submit);
  return controls;
}

export function renderInlineError(message: string): HTMLElement {
  return el("div", "inline-error", message);
}
