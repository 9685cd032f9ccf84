/** Console entry point: wires the bridge link, keyboard capture, and the
 * canvas renderer. Bridge host/port come from page parameters. */

import { KeyTracker, isCommandKey } from "./input.js";
import { BridgeLink } from "./net.js";
import { Renderer, Draw2D } from "./render.js";
import { ViewState } from "./state.js";

export const COMMAND_HZ = 20;

export function bridgeUrl(params: URLSearchParams): string {
  const host = params.get("host") ?? "127.0.0.1";
  const port = params.get("port") ?? "8765";
  return `ws://${host}:${port}/`;
}

export function start(canvas: HTMLCanvasElement, params: URLSearchParams): void {
  const ctx = canvas.getContext("2d") as unknown as Draw2D;
  const view = new ViewState();
  const link = new BridgeLink(bridgeUrl(params), view);
  const keys = new KeyTracker();
  const renderer = new Renderer(ctx);
  link.connect();

  // command stream: immediate send on any change, 20 Hz refresh while held
  const push = () => link.sendCommand(keys.command(view.vMax()));
  window.addEventListener("keydown", (ev) => {
    if (!isCommandKey(ev.key)) return;
    ev.preventDefault();
    if (keys.down(ev.key)) push();
  });
  window.addEventListener("keyup", (ev) => {
    if (!isCommandKey(ev.key)) return;
    ev.preventDefault();
    if (keys.up(ev.key)) push();
  });
  window.addEventListener("blur", () => {
    keys.clear();
    push();
  });
  setInterval(() => {
    if (keys.anyHeld) push();
  }, 1000 / COMMAND_HZ);

  const frame = () => {
    renderer.render(view, performance.now());
    requestAnimationFrame(frame);
  };
  requestAnimationFrame(frame);
}

declare global {
  interface Window {
    multiarmStart?: typeof start;
  }
}

if (typeof window !== "undefined" && typeof document !== "undefined") {
  window.multiarmStart = start;
  const canvas = document.getElementById("console") as HTMLCanvasElement | null;
  if (canvas) {
    start(canvas, new URLSearchParams(window.location.search));
  }
}
