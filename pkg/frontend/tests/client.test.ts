import { describe, expect, it, vi } from "vitest";

import { SessionClient } from "../src/client.js";
import { validateSessionState } from "../src/types.js";
import { baseState, FakeEventSource, ScriptedServer } from "./mock-server.js";

describe("session state validation", () => {
  it("accepts a well-formed payload", () => {
    expect(validateSessionState(baseState())).not.toBeNull();
  });

  it.each([
    [null],
    ["string"],
    [{}],
    [{ ...baseState(), phase: "exploding" }],
    [{ ...baseState(), omega: "high" }],
    [{ ...baseState(), awaiting_confirmation: 1 }],
  ])("rejects malformed payload %#", (payload) => {
    expect(validateSessionState(payload)).toBeNull();
  });
});

describe("event stream resilience", () => {
  it("drops malformed events without crashing and keeps the last good state", async () => {
    const server = new ScriptedServer();
    const warn = vi.spyOn(console, "warn").mockImplementation(() => {});
    const client = new SessionClient("http://mock", server.fetchFn, server.esFactory);
    await client.connect();
    await Promise.resolve();
    const src = server.sources[0];
    src.emit({ garbage: true });
    src.onmessage?.({ data: "{not json" });
    expect(client.state?.phase).toBe("idle");
    expect(warn).toHaveBeenCalled();
    warn.mockRestore();
  });

  it("reconnects with backoff after a stream failure and resyncs state", async () => {
    vi.useFakeTimers();
    const server = new ScriptedServer();
    const offline: boolean[] = [];
    const client = new SessionClient(
      "http://mock",
      server.fetchFn,
      server.esFactory,
      { connection: (on) => offline.push(on) },
      ((fn: () => void, ms: number) => setTimeout(fn, ms)) as typeof setTimeout,
    );
    await client.connect();
    await Promise.resolve();
    await vi.runOnlyPendingTimersAsync();
    expect(server.sources.length).toBe(1);

    server.setState({ phase: "training" });
    server.state = { ...server.state, phase: "done" };
    (server.sources[0] as FakeEventSource).fail();
    expect(offline[offline.length - 1]).toBe(false);

    await vi.advanceTimersByTimeAsync(600);
    // resynced via GET /api/session and resubscribed
    expect(server.sources.length).toBe(2);
    expect(client.state?.phase).toBe("done");
    expect(offline[offline.length - 1]).toBe(true);
    client.close();
    vi.useRealTimers();
  });
});
