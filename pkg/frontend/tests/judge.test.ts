import { describe, expect, it } from "vitest";

import {
  canSubmit,
  choose,
  controlsDisabled,
  markSubmitted,
  newJudgeState,
  revealText,
} from "../src/judge.js";
import type { BlindJudgmentTask, JudgmentVerdict } from "../src/types.js";

const task: BlindJudgmentTask = {
  task_id: "jdg-1",
  task_kind: "judgment",
  patient: { patient_id: "P001", sentences: ["Only sentence."] },
  trial_summary: { trial_id: "T001", title: "Some trial" },
  criterion_text: "History of diabetes",
  kind: "inclusion",
  output_x: { explanation: "x reasoning", evidence_ids: [0], label: "included" },
  output_y: { explanation: "y reasoning", evidence_ids: [], label: "not included" },
  status: "pending",
};

const verdict: JudgmentVerdict = {
  task_id: "jdg-1",
  winner: "x",
  winner_model: "model-one",
  model_x: "model-one",
  model_y: "model-two",
  submitted_at: "2026-08-09T12:00:00+00:00",
};

describe("judgment flow", () => {
  it("requires a choice before submission", () => {
    const state = newJudgeState(task);
    expect(canSubmit(state)).toBe(false);
    expect(canSubmit(choose(state, "tie"))).toBe(true);
  });

  it("keeps model names invisible until submission", () => {
    const state = choose(newJudgeState(task), "x");
    expect(revealText(state)).toBeNull();
    const submitted = markSubmitted(state, verdict);
    expect(revealText(submitted)).toContain("model-one");
    expect(revealText(submitted)).toContain("model-two");
  });

  it("locks controls after submission", () => {
    const submitted = markSubmitted(choose(newJudgeState(task), "x"), verdict);
    expect(controlsDisabled(submitted)).toBe(true);
    expect(canSubmit(submitted)).toBe(false);
    // a post-submit click cannot alter the frozen choice
    expect(choose(submitted, "y").choice).toBe("x");
  });

  it("describes ties without a winner", () => {
    const tied = markSubmitted(choose(newJudgeState(task), "tie"), {
      ...verdict,
      winner: "tie",
      winner_model: null,
    });
    expect(revealText(tied)).toMatch(/^Tie recorded/);
  });
});
