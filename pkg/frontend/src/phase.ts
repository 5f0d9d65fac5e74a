// Legal-action derivation: every mutation button/request is gated through
// these predicates, so the UI cannot emit a request the session would reject.

import type { SessionState } from "./types.js";

export function canSubmitEdit(state: SessionState | null): boolean {
  if (!state) return false;
  if (state.awaiting_confirmation) return false;
  return state.phase === "idle" || state.phase === "done" || state.phase === "failed";
}

export function canAdvanceRound(state: SessionState | null): boolean {
  return !!state && state.awaiting_confirmation;
}

export function canSetOmega(state: SessionState | null): boolean {
  return !!state && state.phase !== "initializing";
}

export function isEditRunning(state: SessionState | null): boolean {
  if (!state) return false;
  return ["rendering", "editing", "training", "finetuning"].includes(state.phase);
}
