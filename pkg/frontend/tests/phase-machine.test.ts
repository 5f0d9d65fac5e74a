// B1: across a 200-event randomized script the client never emits a mutation
// request in a phase where it would be illegal.

import { describe, expect, it } from "vitest";

import { SessionClient } from "../src/client.js";
import { canAdvanceRound, canSubmitEdit, canSetOmega } from "../src/phase.js";
import { baseState, mulberry32, ScriptedServer } from "./mock-server.js";

function legalForPost(url: string, state: ReturnType<typeof baseState>): boolean {
  if (url.includes("/api/edit")) return canSubmitEdit(state);
  if (url.includes("/api/round/advance")) return canAdvanceRound(state);
  if (url.includes("/api/omega")) return canSetOmega(state);
  return false;
}

describe("phase machine gating (B1)", () => {
  it("emits no mutation request in an illegal phase over 200 random events", async () => {
    const server = new ScriptedServer();
    const client = new SessionClient("http://mock", server.fetchFn, server.esFactory);
    await client.connect();
    await Promise.resolve();

    const rand = mulberry32(0xc0ffee);
    for (let i = 0; i < 200; i++) {
      const roll = rand();
      if (roll < 0.45) {
        server.randomStep(rand);
      } else if (roll < 0.65) {
        await client.submitInstruction("make it warm", "gentle");
      } else if (roll < 0.85) {
        await client.advanceRound();
      } else {
        await client.setOmega(rand());
      }
    }

    expect(server.posts.length).toBeGreaterThan(0);
    for (const post of server.posts) {
      expect(
        legalForPost(post.url, post.stateAtRequest),
        `illegal ${post.url} in phase ${post.stateAtRequest.phase}`,
      ).toBe(true);
    }
  });

  it("blocks edits while a run is active and allows them when idle", async () => {
    const server = new ScriptedServer();
    const client = new SessionClient("http://mock", server.fetchFn, server.esFactory);
    await client.connect();
    await Promise.resolve();

    const ok = await client.submitInstruction("warm", "standard");
    expect(ok.sent).toBe(true);
    // server is now rendering; a second submission must not hit the wire
    const blocked = await client.submitInstruction("again");
    expect(blocked.sent).toBe(false);
    expect(server.posts.filter((p) => p.url.includes("/api/edit")).length).toBe(1);
  });

  it("rejects empty instructions locally", async () => {
    const server = new ScriptedServer();
    const client = new SessionClient("http://mock", server.fetchFn, server.esFactory);
    await client.connect();
    const out = await client.submitInstruction("   ");
    expect(out.sent).toBe(false);
    expect(server.posts.length).toBe(0);
  });

  it("advance is only sent at a confirmation barrier", async () => {
    const server = new ScriptedServer();
    const client = new SessionClient("http://mock", server.fetchFn, server.esFactory);
    await client.connect();
    await Promise.resolve();

    expect((await client.advanceRound()).sent).toBe(false);
    server.setState({ phase: "training", awaiting_confirmation: true });
    expect((await client.advanceRound()).sent).toBe(true);
  });
});
