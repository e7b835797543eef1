// Operator console wiring: camera view with annotation overlay, mode
// controls, and live telemetry.  The page is stateless with respect to the
// experiment: a reload rebuilds everything from /state and /runs.

import { ApiClient, ApiError } from "./api.js";
import { StripChart } from "./chart.js";
import { AnnotationLayer } from "./drawing.js";
import { RunStats, formatMetres } from "./runstats.js";
import { TelemetryClient } from "./telemetry.js";
import type { StateSnapshot } from "./types.js";

const api = new ApiClient("");
const annotations = new AnnotationLayer();
const stats = new RunStats();

const el = (id: string) => document.getElementById(id) as HTMLElement;
const frame = () => el("frame") as HTMLImageElement;
const overlay = () => el("overlay") as HTMLCanvasElement;

let lastSnapshot: StateSnapshot | null = null;

function setStatus(text: string, cssClass = ""): void {
  const s = el("status");
  s.textContent = text;
  s.className = `status ${cssClass}`;
}

function redraw(): void {
  const canvas = overlay();
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  annotations.render(ctx);
  const a = lastSnapshot?.activity;
  if (a?.box) {
    const [cu, cv, w, h] = a.box;
    ctx.strokeStyle = "#ffb020";
    ctx.lineWidth = 2;
    ctx.strokeRect(cu - w / 2, cv - h / 2, w, h);
  }
  if (a?.estimate) {
    const [u, v, heading] = a.estimate;
    ctx.strokeStyle = "#ff5050";
    ctx.lineWidth = 2.5;
    ctx.beginPath();
    ctx.moveTo(u, v);
    ctx.lineTo(u + 30 * Math.cos(heading), v + 30 * Math.sin(heading));
    ctx.stroke();
  }
}

function applySnapshot(snap: StateSnapshot): void {
  lastSnapshot = snap;
  annotations.confirmedFence = snap.fence;
  annotations.confirmedTrack = snap.track;
  stats.observe(snap);
  el("mode").textContent = snap.mode;
  const a = snap.activity;
  if (a?.command) {
    el("command").textContent = `v=${a.command[0].toFixed(2)} m/s  w=${a.command[1].toFixed(2)} rad/s`;
  } else if (snap.mode === "IDLE") {
    el("command").textContent = "v=0.00 m/s  w=0.00 rad/s";
  }
  if (a?.cross_track_m !== undefined && a.run !== undefined) {
    chart.push(a.cross_track_m);
    el("run-live").textContent =
      `run ${a.run}: max ${formatMetres(stats.get(a.run)?.max)} / mean ${formatMetres(stats.mean(a.run))}`;
  }
  updateModeButtons(snap);
  redraw();
  if (a?.finished === "AUTONOMY") void refreshRuns();
}

function updateModeButtons(snap: StateSnapshot): void {
  const idle = snap.mode === "IDLE";
  (el("btn-wander") as HTMLButtonElement).disabled = !idle || !snap.fence;
  (el("btn-autonomy") as HTMLButtonElement).disabled = !idle || !snap.track;
  (el("btn-spins") as HTMLButtonElement).disabled = !idle;
  (el("btn-stop") as HTMLButtonElement).disabled = idle;
  el("btn-wander").title = snap.fence ? "" : "draw a geofence first";
  el("btn-autonomy").title = snap.track ? "" : "draw a track first";
}

async function refreshRuns(): Promise<void> {
  const { runs } = await api.getRuns();
  const list = el("runs");
  list.innerHTML = "";
  for (const r of runs) {
    const li = document.createElement("li");
    li.textContent =
      `run ${r.run_id}: max ${formatMetres(r.metrics.cross_track_max_m)}, ` +
      `mean ${formatMetres(r.metrics.cross_track_mean_m)}${r.completed ? "" : " (aborted)"}`;
    list.appendChild(li);
  }
}

async function submitDraft(): Promise<void> {
  const err = annotations.draftError();
  const tool = annotations.tool;
  if (err) {
    setStatus(`cannot submit: ${err}`, "warn");
    return;
  }
  const pts = annotations.takeDraft();
  try {
    if (tool === "geofence") await api.postGeofence(pts);
    else if (tool === "track") await api.postTrack(pts);
    setStatus(`${tool} accepted by server`);
  } catch (e) {
    setStatus(e instanceof ApiError ? `server rejected ${tool}: ${e.message}` : String(e), "error");
  }
  await pollState();
}

async function pollState(): Promise<void> {
  try {
    applySnapshot(await api.getState());
  } catch (e) {
    setStatus(`state poll failed: ${String(e)}`, "error");
  }
}

async function requestMode(mode: "IDLE" | "COLLECT_SPINS" | "WANDER" | "AUTONOMY"): Promise<void> {
  const params: Record<string, unknown> = {};
  if (mode === "AUTONOMY") {
    const ckpt = (el("checkpoint") as HTMLInputElement).value.trim();
    if (ckpt) params.checkpoint = ckpt;
    else params.gt_pose = true;
    params.n_runs = Number((el("n-runs") as HTMLInputElement).value || "1");
  }
  if (mode === "WANDER") {
    params.duration_s = Number((el("wander-duration") as HTMLInputElement).value || "60");
  }
  try {
    await api.postMode(mode, params);
    setStatus(`${mode} requested`);
  } catch (e) {
    setStatus(e instanceof ApiError ? `mode rejected (${e.status}): ${e.message}` : String(e), "error");
  }
  await pollState();
}

const chart = new StripChart(document.getElementById("chart") as HTMLCanvasElement);

function wireUi(): void {
  el("btn-geofence").onclick = () => {
    annotations.beginTool("geofence");
    setStatus("click the camera view to add geofence points, then Submit");
  };
  el("btn-track").onclick = () => {
    annotations.beginTool("track");
    setStatus("click the camera view to add track waypoints, then Submit");
  };
  el("btn-undo").onclick = () => {
    annotations.undo();
    redraw();
  };
  el("btn-submit").onclick = () => void submitDraft();
  el("btn-wander").onclick = () => void requestMode("WANDER");
  el("btn-autonomy").onclick = () => void requestMode("AUTONOMY");
  el("btn-spins").onclick = () => void requestMode("COLLECT_SPINS");
  el("btn-stop").onclick = () => void requestMode("IDLE");
  overlay().onclick = (ev) => {
    const rect = overlay().getBoundingClientRect();
    annotations.addPoint([ev.clientX - rect.left, ev.clientY - rect.top]);
    const err = annotations.draftError();
    setStatus(err ? `draft: ${err}` : "draft ok, Submit when done", err ? "warn" : "");
    redraw();
  };
}

function startFramePolling(): void {
  // 5 Hz is plenty for the desk-scale view
  setInterval(() => {
    frame().src = api.frameUrl();
  }, 200);
}

function startTelemetry(): void {
  const proto = location.protocol === "https:" ? "wss" : "ws";
  const client = new TelemetryClient(`${proto}://${location.host}/api/v1/telemetry`, {
    onSnapshot: applySnapshot,
    onStatus: (status) => {
      el("link").textContent = status;
      el("link").className = `status ${status === "open" ? "" : "warn"}`;
    },
  });
  client.start();
}

async function init(): Promise<void> {
  wireUi();
  startFramePolling();
  startTelemetry();
  await pollState();
  await refreshRuns();
}

void init();
