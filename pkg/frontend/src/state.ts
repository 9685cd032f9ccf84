/** Operator-console view state: the latest frame, the held command, the
 * connection status, and a rolling h_min history for the strip chart.
 * Network callbacks only mutate this; rendering reads it on the animation
 * tick and never blocks on the network. */

import { HelloMessage, StateMessage } from "./protocol.js";

export const STALE_AFTER_MS = 1000;
export const HISTORY_SECONDS = 30;

export interface HistoryPoint {
  t: number;
  hMin: number;
}

export class RingBuffer {
  private buf: HistoryPoint[] = [];

  constructor(readonly windowSeconds: number = HISTORY_SECONDS) {}

  push(point: HistoryPoint): void {
    this.buf.push(point);
    const cutoff = point.t - this.windowSeconds;
    while (this.buf.length > 0 && this.buf[0].t < cutoff) {
      this.buf.shift();
    }
  }

  points(): readonly HistoryPoint[] {
    return this.buf;
  }

  get length(): number {
    return this.buf.length;
  }
}

export type ConnectionStatus = "connecting" | "connected" | "disconnected";

export class ViewState {
  hello: HelloMessage | null = null;
  latest: StateMessage | null = null;
  lastFrameWallMs = -Infinity;
  status: ConnectionStatus = "connecting";
  command: [number, number, number] = [0, 0, 0];
  history = new RingBuffer();

  onHello(msg: HelloMessage): void {
    this.hello = msg;
    this.status = "connected";
  }

  onState(msg: StateMessage, nowMs: number): void {
    this.latest = msg;
    this.lastFrameWallMs = nowMs;
    this.status = "connected";
    this.history.push({ t: msg.t, hMin: msg.h_min });
  }

  onDisconnect(): void {
    this.status = "disconnected";
  }

  /** Data older than STALE_AFTER_MS must be visibly flagged. */
  isStale(nowMs: number): boolean {
    if (this.status !== "connected") return true;
    return nowMs - this.lastFrameWallMs > STALE_AFTER_MS;
  }

  vMax(): number {
    return this.hello?.v_max ?? 0.6;
  }
}
