import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";
import { BridgeLink } from "../src/net.js";
import { ViewState } from "../src/state.js";
import { helloMsg, stateAt } from "./state.test.js";

class FakeWebSocket {
  static instances: FakeWebSocket[] = [];
  static OPEN = 1;
  readyState = FakeWebSocket.OPEN;
  sent: string[] = [];
  onmessage: ((ev: { data: string }) => void) | null = null;
  onclose: (() => void) | null = null;
  onerror: (() => void) | null = null;

  constructor(readonly url: string) {
    FakeWebSocket.instances.push(this);
  }

  send(data: string) { this.sent.push(data); }
  close() { this.onclose?.(); }

  deliver(obj: unknown) { this.onmessage?.({ data: JSON.stringify(obj) }); }
}

beforeEach(() => {
  FakeWebSocket.instances = [];
  vi.stubGlobal("WebSocket", FakeWebSocket);
  vi.useFakeTimers();
});

afterEach(() => {
  vi.unstubAllGlobals();
  vi.useRealTimers();
});

describe("BridgeLink", () => {
  it("routes hello and state frames into the view", () => {
    const view = new ViewState();
    const link = new BridgeLink("ws://x/", view, () => 123);
    link.connect();
    const ws = FakeWebSocket.instances[0];
    ws.deliver(helloMsg);
    ws.deliver(stateAt(0.5));
    expect(view.hello?.v_max).toBe(0.6);
    expect(view.latest?.t).toBe(0.5);
    expect(view.lastFrameWallMs).toBe(123);
  });

  it("clamps outgoing commands to the hello v_max", () => {
    const view = new ViewState();
    const link = new BridgeLink("ws://x/", view);
    link.connect();
    const ws = FakeWebSocket.instances[0];
    ws.deliver({ ...helloMsg, v_max: 0.3 });
    link.sendCommand([5, 0, 0]);
    const sent = JSON.parse(ws.sent[0]);
    expect(Math.hypot(...(sent.v as [number, number, number]))).toBeCloseTo(0.3, 9);
    expect(ws.sent[0].endsWith("\n")).toBe(true);
  });

  it("marks the view disconnected and reconnects after close", () => {
    const view = new ViewState();
    const link = new BridgeLink("ws://x/", view);
    link.connect();
    FakeWebSocket.instances[0].close();
    expect(view.status).toBe("disconnected");
    vi.advanceTimersByTime(1100);
    expect(FakeWebSocket.instances.length).toBe(2);
    link.close();
  });

  it("stops reconnecting once closed", () => {
    const view = new ViewState();
    const link = new BridgeLink("ws://x/", view);
    link.connect();
    link.close();
    vi.advanceTimersByTime(5000);
    expect(FakeWebSocket.instances.length).toBe(1);
  });
});
