/** Bridge connection wrapper: parses incoming frames into the view state
 * and sends velocity commands; reconnects with a fixed backoff. */

import { makeCommand, parseMessage } from "./protocol.js";
import { ViewState } from "./state.js";

export class BridgeLink {
  private ws: WebSocket | null = null;
  private closed = false;

  constructor(
    readonly url: string,
    readonly view: ViewState,
    private readonly now: () => number = () => performance.now(),
  ) {}

  connect(): void {
    if (this.closed) return;
    this.view.status = "connecting";
    const ws = new WebSocket(this.url);
    this.ws = ws;
    ws.onmessage = (ev: MessageEvent) => {
      const msg = parseMessage(String(ev.data));
      if (msg === null) return;
      if (msg.type === "hello") this.view.onHello(msg);
      else this.view.onState(msg, this.now());
    };
    ws.onclose = () => {
      this.view.onDisconnect();
      this.ws = null;
      if (!this.closed) setTimeout(() => this.connect(), 1000);
    };
    ws.onerror = () => ws.close();
  }

  get connected(): boolean {
    return this.ws !== null && this.ws.readyState === WebSocket.OPEN;
  }

  sendCommand(v: [number, number, number]): void {
    if (!this.connected) return;
    const msg = makeCommand(v, this.view.vMax(), Date.now() / 1000);
    this.view.command = msg.v;
    this.ws!.send(JSON.stringify(msg) + "\n");
  }

  close(): void {
    this.closed = true;
    this.ws?.close();
  }
}
