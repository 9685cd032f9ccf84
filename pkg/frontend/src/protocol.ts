/** Wire protocol shared with the teleoperation bridge: one JSON object per
 * WebSocket text message, newline-terminated. */

export interface HelloMessage {
  type: "hello";
  protocol: number;
  v_max: number;
  dt: number;
  stream_hz: number;
  n_agents: number;
  d_margin_env: number;
  d_alert_env: number;
  edges: [number, number][];
}

export interface AgentFrame {
  id: number;
  p: [number, number, number];
  R: number[];
  h_env: number;
}

export interface ObstacleFrame {
  c: [number, number, number];
  r: number;
}

export interface StateMessage {
  type: "state";
  t: number;
  agents: AgentFrame[];
  leader: number;
  h_min: number;
  triggers: { env: number[]; inter: number[] };
  E_p: number;
  E_theta: number;
  obstacles: ObstacleFrame[];
}

export interface CommandMessage {
  type: "cmd";
  v: [number, number, number];
  stamp: number;
}

export type BridgeMessage = HelloMessage | StateMessage;

export function parseMessage(text: string): BridgeMessage | null {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch {
    return null;
  }
  if (typeof raw !== "object" || raw === null) return null;
  const msg = raw as Record<string, unknown>;
  if (msg.type === "hello" && typeof msg.v_max === "number") {
    return msg as unknown as HelloMessage;
  }
  if (
    msg.type === "state" &&
    typeof msg.t === "number" &&
    Array.isArray(msg.agents) &&
    typeof msg.leader === "number" &&
    typeof msg.h_min === "number"
  ) {
    return msg as unknown as StateMessage;
  }
  return null;
}

export function norm3(v: [number, number, number]): number {
  return Math.hypot(v[0], v[1], v[2]);
}

/** Clamp a velocity command to the bridge limit (mirrors the server clamp). */
export function clampCommand(
  v: [number, number, number],
  vMax: number,
): [number, number, number] {
  const n = norm3(v);
  if (n <= vMax || n === 0) return v;
  const s = vMax / n;
  return [v[0] * s, v[1] * s, v[2] * s];
}

export function makeCommand(
  v: [number, number, number],
  vMax: number,
  now: number,
): CommandMessage {
  return { type: "cmd", v: clampCommand(v, vMax), stamp: now };
}
