/** Canvas rendering: top-down workspace with end effectors, formation
 * edges, obstacle discs with a motion trail, the leader highlight, and an
 * h_min strip chart against the safety-margin line. Degrades to a
 * "disconnected" splash when the stream is stale. */

import { ViewState } from "./state.js";

/** The 2D-context subset used here; tests substitute a recorder. */
export interface Draw2D {
  canvas: { width: number; height: number };
  fillStyle: string | CanvasGradient | CanvasPattern;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  font: string;
  textAlign: CanvasTextAlign;
  globalAlpha: number;
  fillRect(x: number, y: number, w: number, h: number): void;
  strokeRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  stroke(): void;
  fill(): void;
  fillText(text: string, x: number, y: number): void;
}

export const COLORS = {
  background: "#10151c",
  agent: "#7fb3ff",
  leader: "#ffd24d",
  edge: "#3c4a5d",
  obstacle: "#e05f5f",
  trail: "#7a3a3a",
  chart: "#6fe0a8",
  chartWarn: "#ffb02e",
  margin: "#4da3ff",
  text: "#d7e0ec",
};

export interface Viewport {
  cx: number;
  cy: number;
  scale: number; // pixels per meter
}

export function workspaceViewport(ctx: Draw2D): Viewport {
  const w = ctx.canvas.width;
  const h = ctx.canvas.height * 0.7;
  return { cx: w / 2, cy: h / 2, scale: Math.min(w, h) / 2.4 };
}

export function toScreen(view: Viewport, x: number, y: number): [number, number] {
  // top-down: world x to the right, world y up, centered on [0.5, 0]
  return [view.cx + (x - 0.5) * view.scale, view.cy - y * view.scale];
}

function circle(ctx: Draw2D, x: number, y: number, r: number): void {
  ctx.beginPath();
  ctx.arc(x, y, r, 0, 2 * Math.PI);
}

export interface ObstacleTrailPoint {
  x: number;
  y: number;
}

export class Renderer {
  private trail: ObstacleTrailPoint[] = [];

  constructor(private readonly ctx: Draw2D) {}

  render(view: ViewState, nowMs: number): void {
    const ctx = this.ctx;
    ctx.globalAlpha = 1;
    ctx.fillStyle = COLORS.background;
    ctx.fillRect(0, 0, ctx.canvas.width, ctx.canvas.height);
    if (view.latest === null || view.isStale(nowMs)) {
      this.splash(view);
      return;
    }
    this.workspace(view);
    this.chart(view);
    this.statusLine(view);
  }

  private splash(view: ViewState): void {
    const ctx = this.ctx;
    ctx.fillStyle = COLORS.text;
    ctx.font = "24px system-ui";
    ctx.textAlign = "center";
    const label = view.status === "connecting" ? "connecting..." : "disconnected";
    ctx.fillText(label, ctx.canvas.width / 2, ctx.canvas.height / 2);
  }

  private workspace(view: ViewState): void {
    const ctx = this.ctx;
    const state = view.latest!;
    const vp = workspaceViewport(ctx);
    ctx.lineWidth = 1.5;
    ctx.strokeStyle = COLORS.edge;
    for (const [a, b] of view.hello?.edges ?? []) {
      const pa = state.agents[a];
      const pb = state.agents[b];
      if (!pa || !pb) continue;
      const [x0, y0] = toScreen(vp, pa.p[0], pa.p[1]);
      const [x1, y1] = toScreen(vp, pb.p[0], pb.p[1]);
      ctx.beginPath();
      ctx.moveTo(x0, y0);
      ctx.lineTo(x1, y1);
      ctx.stroke();
    }
    for (const obs of state.obstacles) {
      const [x, y] = toScreen(vp, obs.c[0], obs.c[1]);
      this.trail.push({ x, y });
      if (this.trail.length > 240) this.trail.shift();
    }
    ctx.fillStyle = COLORS.trail;
    for (const p of this.trail) {
      circle(ctx, p.x, p.y, 1.5);
      ctx.fill();
    }
    ctx.fillStyle = COLORS.obstacle;
    for (const obs of state.obstacles) {
      const [x, y] = toScreen(vp, obs.c[0], obs.c[1]);
      circle(ctx, x, y, Math.max(obs.r * vp.scale, 3));
      ctx.fill();
    }
    for (const agent of state.agents) {
      const [x, y] = toScreen(vp, agent.p[0], agent.p[1]);
      ctx.fillStyle = COLORS.agent;
      circle(ctx, x, y, 7);
      ctx.fill();
      if (agent.id === state.leader) {
        ctx.strokeStyle = COLORS.leader;
        ctx.lineWidth = 3;
        circle(ctx, x, y, 12);
        ctx.stroke();
      }
    }
  }

  private chart(view: ViewState): void {
    const ctx = this.ctx;
    const state = view.latest!;
    const hello = view.hello;
    const w = ctx.canvas.width;
    const top = ctx.canvas.height * 0.72;
    const height = ctx.canvas.height * 0.24;
    const points = view.history.points();
    ctx.strokeStyle = COLORS.edge;
    ctx.lineWidth = 1;
    ctx.strokeRect(8, top, w - 16, height);
    const hMax = Math.max(0.2, ...points.map((p) => p.hMin));
    const hMin = Math.min(0, ...points.map((p) => p.hMin));
    const yOf = (value: number) =>
      top + height - ((value - hMin) / (hMax - hMin || 1)) * height;
    // the prescribed safety margin line sits at h = 0
    ctx.strokeStyle = COLORS.margin;
    ctx.beginPath();
    ctx.moveTo(8, yOf(0));
    ctx.lineTo(w - 8, yOf(0));
    ctx.stroke();
    if (points.length > 1) {
      const t1 = points[points.length - 1].t;
      const t0 = t1 - view.history.windowSeconds;
      const warn =
        hello !== null && state.h_min < hello.d_alert_env - hello.d_margin_env;
      ctx.strokeStyle = warn ? COLORS.chartWarn : COLORS.chart;
      ctx.lineWidth = 2;
      ctx.beginPath();
      points.forEach((p, i) => {
        const x = 8 + ((p.t - t0) / (t1 - t0 || 1)) * (w - 16);
        const y = yOf(p.hMin);
        if (i === 0) ctx.moveTo(x, y);
        else ctx.lineTo(x, y);
      });
      ctx.stroke();
    }
    ctx.fillStyle = COLORS.text;
    ctx.font = "12px system-ui";
    ctx.textAlign = "left";
    ctx.fillText(`h_min ${state.h_min.toFixed(3)} m`, 12, top + 14);
  }

  private statusLine(view: ViewState): void {
    const ctx = this.ctx;
    const state = view.latest!;
    ctx.fillStyle = COLORS.text;
    ctx.font = "13px system-ui";
    ctx.textAlign = "left";
    const cmd = view.command;
    ctx.fillText(
      `t=${state.t.toFixed(2)}s leader=${state.leader} ` +
        `E_p=${state.E_p.toFixed(4)} E_th=${state.E_theta.toFixed(4)} ` +
        `cmd=[${cmd.map((v) => v.toFixed(2)).join(", ")}]`,
      12,
      18,
    );
  }
}
