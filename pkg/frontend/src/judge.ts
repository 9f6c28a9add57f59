/**
 * Blind adjudication state: pick x, y or tie; lock all controls once the
 * verdict is posted; reveal model names only from the submission response.
 */

import type { BlindJudgmentTask, JudgmentVerdict, Winner } from "./types.js";

export interface JudgeState {
  readonly task: BlindJudgmentTask;
  readonly choice: Winner | null;
  readonly submitted: boolean;
  readonly verdict: JudgmentVerdict | null;
}

export function newJudgeState(task: BlindJudgmentTask): JudgeState {
  return { task, choice: null, submitted: false, verdict: null };
}

export function choose(state: JudgeState, winner: Winner): JudgeState {
  if (state.submitted) {
    return state; // double-submit protection: the choice is frozen
  }
  return { ...state, choice: winner };
}

export function canSubmit(state: JudgeState): boolean {
  return state.choice !== null && !state.submitted;
}

export function markSubmitted(state: JudgeState, verdict: JudgmentVerdict): JudgeState {
  return { ...state, submitted: true, verdict };
}

export function controlsDisabled(state: JudgeState): boolean {
  return state.submitted;
}

/** The unblinded reveal text, or null before submission. */
export function revealText(state: JudgeState): string | null {
  if (!state.submitted || state.verdict === null) {
    return null;
  }
  const { winner, winner_model, model_x, model_y } = state.verdict;
  if (winner === "tie") {
    return `Tie recorded. x was ${model_x}, y was ${model_y}.`;
  }
  return `You picked ${winner} = ${winner_model}. (x was ${model_x}, y was ${model_y}.)`;
}
