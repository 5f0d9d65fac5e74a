// Session state mirrored from the service; every inbound payload passes
// through validateSessionState before it reaches the view model.

export type Phase =
  | "initializing"
  | "idle"
  | "rendering"
  | "editing"
  | "training"
  | "finetuning"
  | "done"
  | "failed";

export const PHASES: Phase[] = [
  "initializing",
  "idle",
  "rendering",
  "editing",
  "training",
  "finetuning",
  "done",
  "failed",
];

export interface SessionState {
  session_id: string;
  phase: Phase;
  round_index: number;
  round_total: number;
  latest_loss: number | null;
  preview_frame: number;
  omega: number;
  omega_max: number;
  awaiting_confirmation: boolean;
  instruction: string;
  error: string | null;
}

/** Returns a validated state or null; malformed payloads are dropped (the
 * caller logs a diagnostic, the view never crashes on bad data). */
export function validateSessionState(raw: unknown): SessionState | null {
  if (typeof raw !== "object" || raw === null) return null;
  const r = raw as Record<string, unknown>;
  if (typeof r.session_id !== "string") return null;
  if (typeof r.phase !== "string" || !PHASES.includes(r.phase as Phase)) return null;
  if (typeof r.round_index !== "number" || typeof r.round_total !== "number") return null;
  if (typeof r.omega !== "number" || typeof r.omega_max !== "number") return null;
  if (typeof r.awaiting_confirmation !== "boolean") return null;
  const loss = r.latest_loss;
  if (loss !== null && typeof loss !== "number") return null;
  return {
    session_id: r.session_id,
    phase: r.phase as Phase,
    round_index: r.round_index,
    round_total: r.round_total,
    latest_loss: (loss as number | null) ?? null,
    preview_frame: typeof r.preview_frame === "number" ? r.preview_frame : 0,
    omega: r.omega,
    omega_max: r.omega_max,
    awaiting_confirmation: r.awaiting_confirmation,
    instruction: typeof r.instruction === "string" ? r.instruction : "",
    error: typeof r.error === "string" ? r.error : null,
  };
}
