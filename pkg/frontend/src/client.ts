// Session client: REST calls plus the server-sent event subscription.
// Mutations are gated by the phase predicates; an illegal call is a local
// no-op (returns {sent: false}), so the wire never sees it.

import { canAdvanceRound, canSetOmega, canSubmitEdit } from "./phase.js";
import { SessionState, validateSessionState } from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface EventSourceLike {
  onmessage: ((ev: { data: string }) => void) | null;
  onerror: ((ev: unknown) => void) | null;
  close(): void;
}

export type EventSourceFactory = (url: string) => EventSourceLike;

export interface MutationOutcome {
  sent: boolean;
  ok?: boolean;
  reason?: string;
}

export interface ClientEvents {
  state?: (s: SessionState) => void;
  connection?: (online: boolean) => void;
}

export class SessionClient {
  state: SessionState | null = null;
  online = false;
  /** bumps on every accepted state event; the view uses it for staleness */
  stateSeq = 0;

  private es: EventSourceLike | null = null;
  private reconnectDelay = 500;
  private closed = false;

  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike,
    private esFactory: EventSourceFactory,
    private handlers: ClientEvents = {},
    private setTimer: typeof setTimeout = globalThis.setTimeout.bind(globalThis),
  ) {}

  async connect(): Promise<void> {
    try {
      const resp = await this.fetchFn(`${this.baseUrl}/api/session`);
      const state = validateSessionState(await resp.json());
      if (state) this.acceptState(state);
    } catch {
      // the event stream reconnect loop will resync
    }
    this.subscribe();
  }

  private subscribe(): void {
    if (this.closed) return;
    this.es = this.esFactory(`${this.baseUrl}/api/events`);
    this.es.onmessage = (ev) => {
      let parsed: unknown;
      try {
        parsed = JSON.parse(ev.data);
      } catch {
        console.warn("dropping malformed event payload");
        return;
      }
      const state = validateSessionState(parsed);
      if (!state) {
        console.warn("dropping schema-invalid session event");
        return;
      }
      this.setOnline(true);
      this.reconnectDelay = 500;
      this.acceptState(state);
    };
    this.es.onerror = () => {
      this.setOnline(false);
      this.es?.close();
      this.es = null;
      if (this.closed) return;
      this.setTimer(() => {
        void this.resync();
      }, this.reconnectDelay);
      this.reconnectDelay = Math.min(this.reconnectDelay * 2, 10_000);
    };
  }

  private async resync(): Promise<void> {
    if (this.closed) return;
    try {
      const resp = await this.fetchFn(`${this.baseUrl}/api/session`);
      const state = validateSessionState(await resp.json());
      if (state) {
        this.setOnline(true);
        this.acceptState(state);
      }
    } catch {
      this.setOnline(false);
    }
    this.subscribe();
  }

  private acceptState(state: SessionState): void {
    this.state = state;
    this.stateSeq += 1;
    this.handlers.state?.(state);
  }

  private setOnline(online: boolean): void {
    if (online !== this.online) {
      this.online = online;
      this.handlers.connection?.(online);
    }
  }

  close(): void {
    this.closed = true;
    this.es?.close();
  }

  // --- mutations (phase-gated) ---------------------------------------------

  async submitInstruction(text: string, preset?: string): Promise<MutationOutcome> {
    const trimmed = text.trim();
    if (!trimmed) return { sent: false, reason: "empty instruction" };
    if (!canSubmitEdit(this.state)) return { sent: false, reason: "illegal phase" };
    const body: Record<string, unknown> = { instruction: trimmed };
    if (preset) body.schedule_preset = preset;
    const resp = await this.fetchFn(`${this.baseUrl}/api/edit`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    return { sent: true, ok: resp.ok };
  }

  async advanceRound(): Promise<MutationOutcome> {
    if (!canAdvanceRound(this.state)) return { sent: false, reason: "no barrier" };
    const resp = await this.fetchFn(`${this.baseUrl}/api/round/advance`, { method: "POST" });
    return { sent: true, ok: resp.ok };
  }

  async setOmega(omega: number): Promise<MutationOutcome> {
    if (!canSetOmega(this.state)) return { sent: false, reason: "illegal phase" };
    const max = this.state?.omega_max ?? 1.0;
    const clamped = Math.min(Math.max(omega, 0), max);
    const resp = await this.fetchFn(`${this.baseUrl}/api/omega`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ omega: clamped }),
    });
    return { sent: true, ok: resp.ok };
  }

  previewUrl(frame: number, omega: number): string {
    return `${this.baseUrl}/api/preview?frame=${frame}&omega=${omega}`;
  }
}
