// WebSocket telemetry with reconnect backoff and a staleness indicator.
// The WebSocket constructor is injectable so the logic is testable without
// a browser.

import type { StateSnapshot } from "./types.js";

export interface TelemetryHandlers {
  onSnapshot: (snap: StateSnapshot) => void;
  onStatus?: (status: "connecting" | "open" | "stale" | "closed") => void;
}

type WsLike = {
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
  close(): void;
};

type WsCtor = new (url: string) => WsLike;

export class TelemetryClient {
  private ws: WsLike | null = null;
  private stopped = false;
  private backoffMs = 250;
  private staleTimer: ReturnType<typeof setTimeout> | null = null;
  lastTick = -1;

  constructor(
    private url: string,
    private handlers: TelemetryHandlers,
    private ctor: WsCtor = WebSocket as unknown as WsCtor,
    private staleAfterMs = 2000,
  ) {}

  start(): void {
    this.stopped = false;
    this.connect();
  }

  stop(): void {
    this.stopped = true;
    if (this.staleTimer) clearTimeout(this.staleTimer);
    this.ws?.close();
  }

  private armStaleTimer(): void {
    if (this.staleTimer) clearTimeout(this.staleTimer);
    this.staleTimer = setTimeout(() => this.handlers.onStatus?.("stale"), this.staleAfterMs);
  }

  private connect(): void {
    this.handlers.onStatus?.("connecting");
    const ws = new this.ctor(this.url);
    this.ws = ws;
    ws.onopen = () => {
      this.backoffMs = 250;
      this.handlers.onStatus?.("open");
      this.armStaleTimer();
    };
    ws.onmessage = (ev) => {
      this.armStaleTimer();
      this.handlers.onStatus?.("open");
      try {
        const snap = JSON.parse(String(ev.data)) as StateSnapshot;
        this.lastTick = snap.tick;
        this.handlers.onSnapshot(snap);
      } catch {
        // malformed frame: ignore, the next one will resync
      }
    };
    ws.onerror = () => {
      /* close follows */
    };
    ws.onclose = () => {
      if (this.staleTimer) clearTimeout(this.staleTimer);
      this.handlers.onStatus?.("closed");
      if (!this.stopped) {
        const delay = this.backoffMs;
        this.backoffMs = Math.min(this.backoffMs * 2, 5000);
        setTimeout(() => {
          if (!this.stopped) this.connect();
        }, delay);
      }
    };
  }
}
