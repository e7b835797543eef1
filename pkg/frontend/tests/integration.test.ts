// Full contract test against a real service process: draw + submit
// geometry, surface a server-side rejection, run WANDER and AUTONOMY, and
// check the live cross-track display against the persisted run record.

import { ChildProcess, spawn } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import WebSocket from "ws";

import { ApiClient, ApiError } from "../src/api.js";
import { RunStats } from "../src/runstats.js";
import { TelemetryClient } from "../src/telemetry.js";
import { validateGeofence } from "../src/validation.js";
import type { Point, StateSnapshot } from "../src/types.js";

const PORT = 8931;
const BASE = `http://127.0.0.1:${PORT}`;

const FENCE: Point[] = [
  [92, 137],
  [708, 137],
  [668, 554],
  [132, 554],
];
const BOWTIE: Point[] = [
  [0, 0],
  [100, 100],
  [100, 0],
  [0, 100],
];
// short two-waypoint track so the realtime run finishes quickly
const TRACK: Point[] = [
  [300, 320],
  [520, 320],
];

let proc: ChildProcess;
const api = new ApiClient(BASE);

async function waitForService(timeoutMs = 30000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      await api.getState();
      return;
    } catch {
      await new Promise((r) => setTimeout(r, 250));
    }
  }
  throw new Error("service did not come up");
}

async function waitForIdle(timeoutMs = 60000): Promise<StateSnapshot> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    const state = await api.getState();
    if (state.mode === "IDLE") return state;
    if (Date.now() > deadline) throw new Error(`still in ${state.mode}`);
    await new Promise((r) => setTimeout(r, 200));
  }
}

beforeAll(async () => {
  const dir = mkdtempSync(join(tmpdir(), "deskservo-ui-"));
  const cfgPath = join(dir, "cfg.json");
  writeFileSync(
    cfgPath,
    JSON.stringify({
      seed: 12,
      service_port: PORT,
      service_realtime: true,
      autonomy_timeout_s: 60.0,
    }),
  );
  proc = spawn(
    "python3",
    [
      "-c",
      "import sys; from deskservo.config import load_config; from deskservo.service import serve; cfg = load_config(sys.argv[1]); serve(cfg, sys.argv[2], port=cfg['service_port'])",
      cfgPath,
      join(dir, "out"),
    ],
    { stdio: "ignore" },
  );
  await waitForService();
}, 40000);

afterAll(() => {
  proc?.kill("SIGKILL");
});

describe("operator console against the live service", () => {
  it("runs the full session contract", async () => {
    // clean slate
    let state = await api.getState();
    expect(state.mode).toBe("IDLE");

    // client-side validation warns about the bowtie before any submit
    expect(validateGeofence(BOWTIE)).toMatch(/self-intersecting/);
    // ...and the server's 400 is surfaced if it is forced through
    const rejection = await api.postGeofence(BOWTIE).catch((e) => e);
    expect(rejection).toBeInstanceOf(ApiError);
    expect(rejection.status).toBe(400);
    expect(String(rejection.message)).toMatch(/self-intersecting/);

    // valid geofence and track: server echo becomes the rendered truth
    const fenceAck = await api.postGeofence(FENCE);
    expect(fenceAck.points).toEqual(FENCE.map(([u, v]) => [u, v]));
    const trackAck = await api.postTrack(TRACK);
    expect(trackAck.points).toEqual(TRACK.map(([u, v]) => [u, v]));
    state = await api.getState();
    expect(state.fence).toEqual(fenceAck.points);
    expect(state.track).toEqual(trackAck.points);

    // telemetry accumulates the live cross-track stream
    const stats = new RunStats();
    const doneCommands: [number, number][] = [];
    const telemetry = new TelemetryClient(
      `ws://127.0.0.1:${PORT}/api/v1/telemetry`,
      {
        onSnapshot: (snap) => {
          stats.observe(snap);
          if (snap.activity?.controller_mode === "DONE" && snap.activity.command) {
            doneCommands.push(snap.activity.command);
          }
        },
      },
      WebSocket as never,
    );
    telemetry.start();

    // WANDER (needs the fence)
    await api.postMode("WANDER", { duration_s: 3.0 });
    state = await api.getState();
    expect(state.mode).toBe("WANDER");
    await waitForIdle();

    // AUTONOMY in ground-truth-pose mode for one run
    await api.postMode("AUTONOMY", { gt_pose: true, n_runs: 1 });
    state = await api.getState();
    expect(state.mode).toBe("AUTONOMY");
    await waitForIdle();
    telemetry.stop();

    // the persisted record agrees with what the console displayed live
    const { runs } = await api.getRuns();
    expect(runs).toHaveLength(1);
    const rec = await api.getRun(0);
    expect(rec.completed).toBe(true);
    const live = stats.get(0);
    expect(live).toBeDefined();
    expect(Math.abs(live!.max - rec.metrics.cross_track_max_m)).toBeLessThanOrEqual(0.005);
    const liveMean = stats.mean(0)!;
    expect(Math.abs(liveMean - rec.metrics.cross_track_mean_m)).toBeLessThanOrEqual(0.005);

    // DONE freezes the command display at zero
    for (const [v, w] of doneCommands) {
      expect(v).toBe(0);
      expect(w).toBe(0);
    }

    // a page reload rebuilds the view from /state and /runs alone
    const fresh = new ApiClient(BASE);
    const reloaded = await fresh.getState();
    expect(reloaded.fence).toEqual(fenceAck.points);
    expect(reloaded.track).toEqual(trackAck.points);
    expect(reloaded.runs).toEqual([0]);

    // frame endpoint serves a PNG for the camera view
    const resp = await fetch(`${BASE}/api/v1/frame`);
    const buf = new Uint8Array(await resp.arrayBuffer());
    expect([...buf.slice(0, 4)]).toEqual([0x89, 0x50, 0x4e, 0x47]);
  }, 90000);
});
