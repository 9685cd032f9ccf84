import { describe, expect, it } from "vitest";
import { clampCommand, makeCommand, parseMessage } from "../src/protocol.js";

const hello = JSON.stringify({
  type: "hello", protocol: 1, v_max: 0.6, dt: 0.001, stream_hz: 30,
  n_agents: 4, d_margin_env: 0.01, d_alert_env: 0.1, edges: [[0, 1]],
});

const state = JSON.stringify({
  type: "state", t: 1.25,
  agents: [{ id: 0, p: [0.2, 0.1, 0.6], R: Array(9).fill(0), h_env: 0.15 }],
  leader: 0, h_min: 0.15,
  triggers: { env: [0], inter: [] },
  E_p: 0.001, E_theta: 0.002, obstacles: [{ c: [0.5, 0, 0.7], r: 0.05 }],
});

describe("parseMessage", () => {
  it("parses hello frames", () => {
    const msg = parseMessage(hello);
    expect(msg?.type).toBe("hello");
    if (msg?.type === "hello") expect(msg.v_max).toBe(0.6);
  });

  it("parses state frames including trailing newline", () => {
    const msg = parseMessage(state + "\n");
    expect(msg?.type).toBe("state");
    if (msg?.type === "state") {
      expect(msg.leader).toBe(0);
      expect(msg.agents[0].h_env).toBeCloseTo(0.15);
    }
  });

  it("rejects malformed or foreign payloads", () => {
    expect(parseMessage("not json")).toBeNull();
    expect(parseMessage("42")).toBeNull();
    expect(parseMessage('{"type":"mystery"}')).toBeNull();
    expect(parseMessage('{"type":"state"}')).toBeNull();
  });
});

describe("clampCommand", () => {
  it("passes small commands through untouched", () => {
    expect(clampCommand([0.1, 0, 0], 0.6)).toEqual([0.1, 0, 0]);
  });

  it("scales oversized commands onto the limit sphere", () => {
    const v = clampCommand([2, 0, 0], 0.6);
    expect(Math.hypot(...v)).toBeCloseTo(0.6, 12);
  });

  it("never emits a command above v_max through makeCommand", () => {
    for (const raw of [[3, -4, 0], [0, 0, 10], [0.59, 0, 0]] as const) {
      const msg = makeCommand([...raw] as [number, number, number], 0.6, 0);
      expect(Math.hypot(...msg.v)).toBeLessThanOrEqual(0.6 + 1e-12);
    }
  });
});
