// Thin websocket client with reconnect. The socket implementation is
// injectable so node tests can drive the same code with the `ws` package.

import type { ClientMsg, ServerMsg } from "./protocol.js";

export interface WsLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
}

export type WsFactory = (url: string) => WsLike;

export interface ClientOptions {
  url: string;
  onMessage: (msg: ServerMsg) => void;
  onStatus?: (status: "connecting" | "open" | "closed") => void;
  makeSocket?: WsFactory;
  reconnect?: boolean;
  backoffMinMs?: number;
  backoffMaxMs?: number;
}

export class BridgeClient {
  private ws: WsLike | null = null;
  private backoffMs: number;
  private closedByUser = false;
  private timer: ReturnType<typeof setTimeout> | null = null;

  constructor(private opts: ClientOptions) {
    this.backoffMs = opts.backoffMinMs ?? 500;
  }

  connect(): void {
    this.closedByUser = false;
    this.opts.onStatus?.("connecting");
    const make: WsFactory =
      this.opts.makeSocket ?? ((url) => new WebSocket(url) as unknown as WsLike);
    const ws = make(this.opts.url);
    this.ws = ws;
    ws.onopen = () => {
      this.backoffMs = this.opts.backoffMinMs ?? 500;
      this.opts.onStatus?.("open");
    };
    ws.onmessage = (ev) => {
      let parsed: unknown;
      try {
        parsed = JSON.parse(String(ev.data));
      } catch {
        return; // not ours
      }
      this.opts.onMessage(parsed as ServerMsg);
    };
    ws.onerror = () => {
      // onclose follows; nothing to do here
    };
    ws.onclose = () => {
      this.opts.onStatus?.("closed");
      this.ws = null;
      if (this.opts.reconnect !== false && !this.closedByUser) {
        this.timer = setTimeout(() => this.connect(), this.backoffMs);
        this.backoffMs = Math.min(this.backoffMs * 2, this.opts.backoffMaxMs ?? 8000);
      }
    };
  }

  send(msg: ClientMsg): boolean {
    if (this.ws === null) return false;
    try {
      this.ws.send(JSON.stringify(msg));
      return true;
    } catch {
      return false;
    }
  }

  close(): void {
    this.closedByUser = true;
    if (this.timer !== null) clearTimeout(this.timer);
    this.ws?.close();
  }
}
