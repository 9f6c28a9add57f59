/**
 * Application shell: fetches tasks, maintains the current draft or judgment
 * state, and re-renders on every interaction. All durable state lives on the
 * server; a hard refresh simply re-fetches the next pending task.
 */

import { ApiError, ServiceClient } from "./api.js";
import {
  AnnotationDraft,
  buildSubmission,
  canSubmit,
  missingFields,
  needsEvidenceConfirmation,
  newDraft,
  toggleEvidence,
  withErrorType,
  withLabel,
  withReasoningMode,
} from "./annotate.js";
import { JudgeState, choose, markSubmitted, newJudgeState, revealText } from "./judge.js";
import {
  renderCriterionPanel,
  renderErrorTypePicker,
  renderInlineError,
  renderJudgmentControls,
  renderLabelPicker,
  renderModelOutput,
  renderProgress,
  renderReasoningToggle,
  renderSentences,
  renderSubmitBar,
} from "./view.js";
import type { Winner } from "./types.js";

type Mode = "annotation" | "judgment";

export class App {
  private draft: AnnotationDraft | null = null;
  private judge: JudgeState | null = null;
  private mode: Mode = "annotation";
  private error: string | null = null;
  private notice: string | null = null;

  constructor(
    private readonly root: HTMLElement,
    private readonly client: ServiceClient,
    private readonly annotatorId: string,
    private readonly confirmDialog: (message: string) => boolean = (m) => window.confirm(m),
  ) {}

  async start(): Promise<void> {
    await this.loadNext();
  }

  private async loadNext(): Promise<void> {
    this.error = null;
    try {
      if (this.mode === "annotation") {
        const task = await this.client.nextAnnotationTask();
        this.draft = newDraft(task);
        this.judge = null;
      } else {
        const task = await this.client.nextJudgmentTask();
        this.judge = newJudgeState(task);
        this.draft = null;
      }
    } catch (error) {
      this.draft = null;
      this.judge = null;
      if (error instanceof ApiError && error.status === 404) {
        this.notice = `no pending ${this.mode} tasks`;
      } else {
        this.error = String(error);
      }
    }
    await this.render();
  }

  private async submitAnnotation(): Promise<void> {
    if (!this.draft || !canSubmit(this.draft)) {
      return;
    }
    if (needsEvidenceConfirmation(this.draft)) {
      const ok = this.confirmDialog(
        "No evidence sentences are selected but the label claims relevant " +
          "information exists. Submit anyway?",
      );
      if (!ok) return;
    }
    const body = buildSubmission(this.draft, this.annotatorId);
    try {
      await this.client.submitAnnotation(this.draft.task.task_id, body);
      this.notice = "annotation stored";
      await this.loadNext();
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        this.notice = "task was already completed elsewhere; refreshed";
        await this.loadNext();
      } else {
        this.error = error instanceof ApiError ? error.detail : String(error);
        await this.render();
      }
    }
  }

  private async skipCurrent(): Promise<void> {
    if (!this.draft) return;
    try {
      await this.client.skipTask(this.draft.task.task_id);
      await this.loadNext();
    } catch (error) {
      this.error = error instanceof ApiError ? error.detail : String(error);
      await this.render();
    }
  }

  private async submitJudgment(): Promise<void> {
    if (!this.judge || this.judge.choice === null || this.judge.submitted) {
      return;
    }
    try {
      const { verdict } = await this.client.submitJudgment(
        this.judge.task.task_id,
        this.judge.choice,
      );
      this.judge = markSubmitted(this.judge, verdict);
      await this.render();
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        this.notice = "task already judged; refreshed";
        await this.loadNext();
      } else {
        this.error = error instanceof ApiError ? error.detail : String(error);
        await this.render();
      }
    }
  }

  private update(draft: AnnotationDraft): void {
    this.draft = draft;
    void this.render();
  }

  async render(): Promise<void> {
    this.root.replaceChildren();
    const header = document.createElement("header");
    const title = document.createElement("h1");
    title.textContent = "Criterion review";
    header.appendChild(title);
    const switcher = document.createElement("div");
    switcher.className = "mode-switch";
    for (const mode of ["annotation", "judgment"] as const) {
      const button = document.createElement("button");
      button.type = "button";
      button.textContent = mode;
      button.className = mode === this.mode ? "active" : "";
      button.addEventListener("click", () => {
        this.mode = mode;
        void this.loadNext();
      });
      switcher.appendChild(button);
    }
    header.appendChild(switcher);
    try {
      header.appendChild(renderProgress(await this.client.progress()));
    } catch {
      // progress is informational; a failed poll never blocks the flow
    }
    this.root.appendChild(header);

    if (this.notice) {
      const notice = document.createElement("div");
      notice.className = "notice";
      notice.textContent = this.notice;
      this.root.appendChild(notice);
      this.notice = null;
    }
    if (this.error) {
      this.root.appendChild(renderInlineError(this.error));
    }

    if (this.draft) {
      this.renderAnnotation(this.draft);
    } else if (this.judge) {
      this.renderJudgment(this.judge);
    }
  }

  private renderAnnotation(draft: AnnotationDraft): void {
    const main = document.createElement("main");
    main.className = "annotation-view";
    main.appendChild(
      renderCriterionPanel(draft.task.criterion_text, draft.task.kind, draft.task.trial_summary),
    );
    main.appendChild(
      renderSentences(draft.task.patient, draft.evidence, (sentenceId) =>
        this.update(toggleEvidence(draft, sentenceId)),
      ),
    );
    main.appendChild(
      renderLabelPicker(draft.task.kind, draft.label, (label) =>
        this.update(withLabel(draft, label)),
      ),
    );
    main.appendChild(
      renderReasoningToggle(draft.reasoningMode, (mode) =>
        this.update(withReasoningMode(draft, mode)),
      ),
    );
    main.appendChild(
      renderErrorTypePicker(draft.errorType, (errorType) =>
        this.update(withErrorType(draft, errorType)),
      ),
    );
    main.appendChild(
      renderSubmitBar(
        draft,
        missingFields(draft),
        () => void this.submitAnnotation(),
        () => void this.skipCurrent(),
      ),
    );
    this.root.appendChild(main);
  }

  private renderJudgment(state: JudgeState): void {
    const main = document.createElement("main");
    main.className = "judgment-view";
    main.appendChild(
      renderCriterionPanel(state.task.criterion_text, state.task.kind, state.task.trial_summary),
    );
    const cited = new Set([
      ...state.task.output_x.evidence_ids,
      ...state.task.output_y.evidence_ids,
    ]);
    main.appendChild(renderSentences(state.task.patient, new Set(), () => undefined, cited));
    const outputs = document.createElement("div");
    outputs.className = "outputs";
    outputs.appendChild(renderModelOutput("x", state.task.output_x));
    outputs.appendChild(renderModelOutput("y", state.task.output_y));
    main.appendChild(outputs);
    main.appendChild(
      renderJudgmentControls(
        state,
        (winner: Winner) => {
          this.judge = choose(state, winner);
          void this.render();
        },
        () => void this.submitJudgment(),
      ),
    );
    const reveal = revealText(state);
    if (reveal) {
      const banner = document.createElement("div");
      banner.className = "reveal";
      banner.textContent = reveal;
      main.appendChild(banner);
    }
    this.root.appendChild(main);
  }
}

export function bootstrap(): void {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app mount point");
  const annotator = localStorage.getItem("annotator_id") ?? "annotator-1";
  const app = new App(root, new ServiceClient(""), annotator);
  void app.start();
}
