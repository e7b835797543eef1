// Thin typed client over /api/v1 with in-flight de-duplication for the
// idempotent GETs the UI polls.

import type { Mode, Point, RunRecord, RunSummary, StateSnapshot } from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
  }
}

type Fetcher = typeof fetch;

export class ApiClient {
  private inflight = new Map<string, Promise<unknown>>();

  constructor(
    private base: string = "",
    private fetcher: Fetcher = fetch.bind(globalThis),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const doFetch = async (): Promise<T> => {
      const resp = await this.fetcher(this.base + path, {
        method,
        headers: body === undefined ? undefined : { "content-type": "application/json" },
        body: body === undefined ? undefined : JSON.stringify(body),
      });
      const text = await resp.text();
      let parsed: unknown = null;
      try {
        parsed = text ? JSON.parse(text) : null;
      } catch {
        parsed = null;
      }
      if (!resp.ok) {
        const detail =
          parsed && typeof parsed === "object" && "error" in (parsed as Record<string, unknown>)
            ? String((parsed as Record<string, unknown>).error)
            : `HTTP ${resp.status}`;
        throw new ApiError(resp.status, detail);
      }
      return parsed as T;
    };
    if (method === "GET") {
      const existing = this.inflight.get(path);
      if (existing) return existing as Promise<T>;
      const p = doFetch().finally(() => this.inflight.delete(path));
      this.inflight.set(path, p);
      return p;
    }
    return doFetch();
  }

  getState(): Promise<StateSnapshot> {
    return this.request("GET", "/api/v1/state");
  }

  postGeofence(points: Point[]): Promise<{ ok: boolean; points: Point[] }> {
    return this.request("POST", "/api/v1/geofence", { points });
  }

  postTrack(points: Point[]): Promise<{ ok: boolean; points: Point[] }> {
    return this.request("POST", "/api/v1/track", { points });
  }

  postMode(mode: Mode, params: Record<string, unknown> = {}): Promise<{ ok: boolean }> {
    return this.request("POST", "/api/v1/mode", { mode, ...params });
  }

  getRuns(): Promise<{ runs: RunSummary[] }> {
    return this.request("GET", "/api/v1/runs");
  }

  getRun(id: number): Promise<RunRecord> {
    return this.request("GET", `/api/v1/runs/${id}`);
  }

  frameUrl(): string {
    return `${this.base}/api/v1/frame?ts=${Date.now()}`;
  }
}
