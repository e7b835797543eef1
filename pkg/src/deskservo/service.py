"""HTTP/WebSocket front-end for operating the stack from a browser.

One background thread owns the simulation and advances whichever activity
is running (spin collection, wandering, autonomy); request handlers only
queue mode changes and read immutable snapshots published once per tick,
so readers never see a half-updated state.  All endpoints live under
/api/v1.
"""

from __future__ import annotations

import io
import json
import math
import threading
import time
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse, Response
from PIL import Image, ImageDraw

from . import config as cfgmod
from .autonomy import (
    AutonomyDriver,
    RunRecord,
    _distance_to_ground_polyline,
    _run_seed,
    compute_run_metrics,
    ground_track_for,
    make_gains,
    save_runs,
    start_pose_for_track,
)
from .data import (
    WanderDriver,
    calibrate_rotation,
    label_orientations,
    run_spin_collection,
    save_labels,
    save_sessions,
    save_wander_log,
    split,
    save_dataset,
)
from .errors import DeskServoError, RobotLostTimeout
from .estimator import load_checkpoint
from .geometry import Geofence, ImagePoint, ImageTrack
from .world import Pose2D, World

MODES = ("IDLE", "COLLECT_SPINS", "WANDER", "AUTONOMY")


def _fresh_world(cfg: dict, seed: int, zero_noise: bool = False, start: Optional[Pose2D] = None) -> World:
    world = cfgmod.make_world(cfg, seed=seed, zero_noise=zero_noise)
    if start is not None:
        world.pose = start
        world.log = type(world.log)()
        world.log.append(world.t, start)
    return world


class ServiceRuntime:
    """Owns the world and the active mode; runs in its own thread."""

    def __init__(self, cfg: dict, out_dir: str | Path):
        self.cfg = cfg
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.cam = cfgmod.make_camera(cfg)
        self.lock = threading.Lock()
        self.mode = "IDLE"
        self.fence: Optional[Geofence] = None
        self.track: Optional[ImageTrack] = None
        self.calibration: Optional[float] = None
        self.runs: dict[int, RunRecord] = {}
        self.snapshot: dict = {}
        self._world = cfgmod.make_world(cfg)
        self._activity = None
        self._pending: Optional[dict] = None
        self._stop_requested = False
        self._shutdown = False
        self._tick = 0
        self._thread: Optional[threading.Thread] = None
        self._publish(None)

    # --- lifecycle -------------------------------------------------------

    def start(self) -> None:
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._shutdown = True
        if self._thread is not None:
            self._thread.join(timeout=5.0)

    # --- API-side commands (called from request handlers) -----------------

    def set_fence(self, points: list) -> Geofence:
        fence = Geofence([ImagePoint(float(u), float(v)) for u, v in points])
        with self.lock:
            if self.mode != "IDLE":
                raise ModeConflict(f"cannot edit geometry during {self.mode}")
            self.fence = fence
        return fence

    def set_track(self, points: list) -> ImageTrack:
        track = ImageTrack([ImagePoint(float(u), float(v)) for u, v in points])
        with self.lock:
            if self.mode != "IDLE":
                raise ModeConflict(f"cannot edit geometry during {self.mode}")
            self.track = track
        return track

    def request_mode(self, mode: str, params: dict) -> None:
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        with self.lock:
            if mode == "IDLE":
                self._stop_requested = True
                return
            if self.mode != "IDLE":
                raise ModeConflict(f"{self.mode} already active")
            if mode == "WANDER" and self.fence is None:
                raise ModeConflict("WANDER needs a geofence")
            if mode == "AUTONOMY" and self.track is None:
                raise ModeConflict("AUTONOMY needs a track")
            if mode == "AUTONOMY" and not params.get("gt_pose") and not params.get("checkpoint"):
                raise ModeConflict("AUTONOMY needs a model checkpoint or gt_pose")
            self._pending = {"mode": mode, "params": params}
            # flip the label now so /state never reports IDLE while a
            # requested activity is waiting for its first tick
            self.mode = mode
        self._publish(None)

    # --- tick thread -------------------------------------------------------

    def _loop(self) -> None:
        period = self.cfg["tick_dt"] if self.cfg.get("service_realtime") else 0.0
        while not self._shutdown:
            start = time.monotonic()
            self._advance()
            if period > 0:
                lag = period - (time.monotonic() - start)
                if lag > 0:
                    time.sleep(lag)
            elif self._activity is None:
                time.sleep(0.005)  # idle: don't spin the CPU

    def _advance(self) -> None:
        with self.lock:
            pending, self._pending = self._pending, None
            stop, self._stop_requested = self._stop_requested, False
        if stop and self._activity is not None:
            self._finalize(aborted=True)
        if pending is not None:
            try:
                self._begin(pending["mode"], pending["params"])
            except DeskServoError as e:
                with self.lock:
                    self.mode = "IDLE"
                self._publish({"error": str(e)})
                return
        if self._activity is None:
            return
        try:
            tick_info = self._activity["step"]()
        except (RobotLostTimeout, DeskServoError) as e:
            self._finalize(aborted=True, error=str(e))
            return
        self._tick += 1
        self._publish(tick_info)
        if self._activity is not None and self._activity["done"]():
            self._finalize()

    def _begin(self, mode: str, params: dict) -> None:
        cfg = self.cfg
        seed = int(params.get("seed", cfg["seed"]))
        if mode == "WANDER":
            world = _fresh_world(cfg, seed)
            driver = WanderDriver(
                world,
                self.fence,
                world.rng_behavior,
                v_nom=cfg["wander_v_nom"],
                omega_cal=self.calibration,
                lookahead_px=cfg["wander_lookahead_px"],
                min_clearance_px=cfg["wander_min_clearance_px"],
                miss_stop_s=cfg["wander_miss_stop_s"],
                miss_lost_s=cfg["wander_miss_lost_s"],
            )
            duration = float(params.get("duration_s", cfg["wander_duration_s"]))
            t_end = world.t + duration

            def step():
                frame = driver.step()
                return {
                    "world": world,
                    "box": frame.box,
                    "spinning": frame.spinning,
                    "progress": min(1.0, world.t / max(1e-9, t_end)),
                }

            self._activity = {
                "kind": "WANDER",
                "step": step,
                "done": lambda: world.t >= t_end - 1e-9,
                "world": world,
                "driver": driver,
                "seed": seed,
            }
        elif mode == "COLLECT_SPINS":
            world = _fresh_world(cfg, seed, zero_noise=True)
            locations = cfgmod.spin_locations(cfg)
            result: dict = {}

            def run():
                result["sessions"] = run_spin_collection(
                    world, self.cam, locations, spin_count=cfg["spin_count"]
                )

            # spin collection is scripted end-to-end; run it in one step
            self._activity = {
                "kind": "COLLECT_SPINS",
                "step": lambda: (run(), {"world": world})[1],
                "done": lambda: "sessions" in result,
                "world": world,
                "result": result,
                "seed": seed,
            }
        elif mode == "AUTONOMY":
            n_runs = int(params.get("n_runs", cfg["autonomy_n_runs"]))
            gt_pose = bool(params.get("gt_pose", False))
            model = None
            if not gt_pose:
                model = load_checkpoint(params["checkpoint"])
            ground = ground_track_for(cfg, self.track)
            state = {"run": 0, "records": [], "driver": None, "world": None}

            def next_run():
                run_seed = _run_seed(seed, state["run"])
                world = World(
                    cam=self.cam,
                    robot=cfgmod.make_robot(cfg),
                    noise=cfgmod.make_noise(cfg, zero=gt_pose),
                    start=start_pose_for_track(self.cam, self.track),
                    dt=cfg["tick_dt"],
                    seed=run_seed,
                    crop_size=cfg["crop_size_px"],
                    crop_noise=0.0 if gt_pose else cfg["crop_noise_level"],
                    crop_zoom=cfg["crop_zoom"],
                )
                state["world"] = world
                state["driver"] = AutonomyDriver(
                    world, self.track, make_gains(cfg), params=model, gt_pose=gt_pose
                )
                state["run_seed"] = run_seed

            next_run()

            def step():
                driver = state["driver"]
                world = state["world"]
                tk = driver.step()
                timed_out = world.t > cfg["autonomy_timeout_s"]
                if driver.done or timed_out:
                    rec = RunRecord(
                        run_id=state["run"],
                        seed=state["run_seed"],
                        gt_pose_mode=gt_pose,
                        config=dict(cfg),
                        track_px=[[p.u, p.v] for p in self.track.waypoints],
                        ticks=driver.ticks,
                        completed=driver.done,
                    )
                    rec.metrics = compute_run_metrics(rec, ground_track_for(cfg, self.track))
                    state["records"].append(rec)
                    state["run"] += 1
                    if state["run"] < n_runs:
                        next_run()
                return {
                    "world": state["world"],
                    "box": tk.box,
                    "estimate": tk.estimate,
                    "command": [tk.v, tk.omega],
                    "controller_mode": tk.mode,
                    "cross_track_px": tk.est_ct_px,
                    "cross_track_m": _distance_to_ground_polyline(tk.gt_x, tk.gt_y, ground),
                    "run": min(state["run"], n_runs - 1),
                }

            self._activity = {
                "kind": "AUTONOMY",
                "step": step,
                "done": lambda: state["run"] >= n_runs,
                "world": None,
                "state": state,
                "seed": seed,
            }
        else:
            raise ValueError(f"unhandled mode {mode}")
        with self.lock:
            self.mode = mode

    def _finalize(self, aborted: bool = False, error: Optional[str] = None) -> None:
        activity, self._activity = self._activity, None
        kind = activity["kind"]
        cfg = self.cfg
        if kind == "WANDER":
            frames = activity["driver"].frames
            if frames:
                save_wander_log(self.out_dir / "wander_log.jsonl", frames, cfg["crop_size_px"])
                labels = label_orientations(frames, cfg["label_dt_s"], cfg["label_tau_px"])
                save_labels(self.out_dir / "labels.jsonl", labels, cfg["crop_size_px"])
                if labels and labels[-1].t - labels[0].t > cfg["split_test_duration_s"]:
                    save_dataset(
                        self.out_dir / "dataset.jsonl",
                        split(labels, cfg["split_test_duration_s"]),
                        cfg["crop_size_px"],
                    )
        elif kind == "COLLECT_SPINS":
            sessions = activity["result"].get("sessions")
            if sessions:
                save_sessions(self.out_dir / "spin_sessions.jsonl", sessions)
                self.calibration = calibrate_rotation(sessions)
                with open(self.out_dir / "calibration.json", "w") as f:
                    json.dump({"omega_rad_s": self.calibration}, f, sort_keys=True)
                    f.write("\n")
        elif kind == "AUTONOMY":
            records = activity["state"]["records"]
            if records:
                for r in records:
                    self.runs[r.run_id] = r
                save_runs(self.out_dir / "runs", records)
        with self.lock:
            self.mode = "IDLE"
        info = {"finished": kind, "aborted": aborted}
        if error:
            info["error"] = error
        self._publish(info)

    # --- snapshots ---------------------------------------------------------

    def _publish(self, info: Optional[dict]) -> None:
        world = None
        if self._activity is not None:
            world = self._activity.get("world") or (info or {}).get("world")
        if world is None and info:
            world = info.get("world")
        if world is None:
            world = self._world
        pose = world.pose
        snap = {
            "tick": self._tick,
            "t": world.t,
            "mode": self.mode,
            "fence": None if self.fence is None else [[p.u, p.v] for p in self.fence.vertices],
            "track": None if self.track is None else [[p.u, p.v] for p in self.track.waypoints],
            "calibration_rad_s": self.calibration,
            "pose": {"x": pose.x, "y": pose.y, "heading": pose.heading},
            "runs": sorted(self.runs),
        }
        if info:
            extra = {}
            for key in ("box", "estimate", "command", "controller_mode", "cross_track_px",
                        "cross_track_m", "run", "spinning", "progress", "finished", "aborted", "error"):
                if key in info and info[key] is not None:
                    val = info[key]
                    if key == "box":
                        val = [val.center.u, val.center.v, val.width, val.height]
                    elif key == "estimate":
                        val = [val.position.u, val.position.v, val.heading]
                    extra[key] = val
            snap["activity"] = extra
        self.snapshot = snap  # atomic swap; readers never see partial state

    # --- frame rendering ------------------------------------------------------

    def render_frame(self) -> bytes:
        """PNG of the simulated camera view with overlays."""
        snap = self.snapshot
        cfg = self.cfg
        w, h = cfg["image_width"], cfg["image_height"]
        img = Image.new("RGB", (w, h), (228, 228, 224))
        draw = ImageDraw.Draw(img)
        # perspective ground grid
        for gx in np.arange(-2.0, 2.01, 0.25):
            pts = [self._proj(gx, gy) for gy in np.arange(-0.5, 2.51, 0.1)]
            draw.line([p for p in pts if p], fill=(205, 205, 200), width=1)
        for gy in np.arange(-0.5, 2.51, 0.25):
            pts = [self._proj(gx, gy) for gx in np.arange(-2.0, 2.01, 0.1)]
            draw.line([p for p in pts if p], fill=(205, 205, 200), width=1)
        if snap.get("fence"):
            draw.polygon([tuple(p) for p in snap["fence"]], outline=(40, 160, 60), width=3)
        if snap.get("track"):
            draw.line([tuple(p) for p in snap["track"]], fill=(50, 90, 200), width=3)
            for p in snap["track"]:
                draw.ellipse([p[0] - 4, p[1] - 4, p[0] + 4, p[1] + 4], fill=(50, 90, 200))
        pose = snap["pose"]
        r = cfg["robot_radius_m"]
        ring = []
        for a in np.linspace(0, 2 * math.pi, 24, endpoint=False):
            q = self._proj(pose["x"] + r * math.cos(a), pose["y"] + r * math.sin(a))
            if q:
                ring.append(q)
        if len(ring) > 2:
            draw.polygon(ring, fill=(60, 60, 70))
        tip = self._proj(
            pose["x"] + 1.8 * r * math.cos(pose["heading"]),
            pose["y"] + 1.8 * r * math.sin(pose["heading"]),
        )
        c = self._proj(pose["x"], pose["y"])
        if tip and c:
            draw.line([c, tip], fill=(220, 60, 50), width=3)
        buf = io.BytesIO()
        img.save(buf, format="PNG")
        return buf.getvalue()

    def _proj(self, x: float, y: float):
        m = self.cam.H @ np.array([x, y, 1.0])
        if abs(m[2]) < 1e-9:
            return None
        return (float(m[0] / m[2]), float(m[1] / m[2]))


class ModeConflict(DeskServoError):
    """Requested mode change conflicts with the current state."""


def create_app(
    cfg: Optional[dict] = None,
    out_dir: str | Path = "deskservo_out",
    ui_dir: Optional[str | Path] = None,
) -> FastAPI:
    from contextlib import asynccontextmanager

    cfg = dict(cfgmod.DEFAULTS) if cfg is None else cfg
    runtime = ServiceRuntime(cfg, out_dir)

    @asynccontextmanager
    async def lifespan(_app):
        runtime.start()
        yield
        runtime.stop()

    app = FastAPI(title="deskservo", version="0.1.0", lifespan=lifespan)
    app.state.runtime = runtime

    api = "/api/v1"

    @app.get(api + "/state")
    def get_state():
        return JSONResponse(runtime.snapshot)

    @app.get(api + "/frame")
    def get_frame():
        return Response(content=runtime.render_frame(), media_type="image/png")

    @app.post(api + "/geofence")
    def post_geofence(body: dict):
        try:
            fence = runtime.set_fence(body["points"])
        except ModeConflict as e:
            return JSONResponse({"error": str(e)}, status_code=409)
        except (ValueError, KeyError, TypeError) as e:
            return JSONResponse({"error": str(e)}, status_code=400)
        runtime._publish(None)
        return {"ok": True, "points": [[p.u, p.v] for p in fence.vertices]}

    @app.post(api + "/track")
    def post_track(body: dict):
        try:
            track = runtime.set_track(body["points"])
        except ModeConflict as e:
            return JSONResponse({"error": str(e)}, status_code=409)
        except (ValueError, KeyError, TypeError) as e:
            return JSONResponse({"error": str(e)}, status_code=400)
        runtime._publish(None)
        return {"ok": True, "points": [[p.u, p.v] for p in track.waypoints]}

    @app.post(api + "/mode")
    def post_mode(body: dict):
        mode = body.get("mode")
        try:
            runtime.request_mode(mode, {k: v for k, v in body.items() if k != "mode"})
        except ModeConflict as e:
            return JSONResponse({"error": str(e)}, status_code=409)
        except (ValueError, KeyError, TypeError) as e:
            return JSONResponse({"error": str(e)}, status_code=400)
        return {"ok": True, "requested": mode}

    @app.get(api + "/runs")
    def get_runs():
        return {
            "runs": [
                {"run_id": rid, "metrics": runtime.runs[rid].metrics, "completed": runtime.runs[rid].completed}
                for rid in sorted(runtime.runs)
            ]
        }

    @app.get(api + "/runs/{run_id}")
    def get_run(run_id: int):
        rec = runtime.runs.get(run_id)
        if rec is None:
            return JSONResponse({"error": f"unknown run {run_id}"}, status_code=404)
        from .autonomy import _tick_json

        return {
            "run_id": rec.run_id,
            "seed": rec.seed,
            "gt_pose_mode": rec.gt_pose_mode,
            "completed": rec.completed,
            "metrics": rec.metrics,
            "track_px": rec.track_px,
            "ticks": [_tick_json(tk) for tk in rec.ticks],
        }

    if ui_dir is not None and Path(ui_dir, "index.html").exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    @app.websocket(api + "/telemetry")
    async def telemetry(ws: WebSocket):
        await ws.accept()
        import asyncio

        last = -1
        try:
            while True:
                snap = runtime.snapshot
                if snap["tick"] != last:
                    last = snap["tick"]
                    await ws.send_text(json.dumps(snap, sort_keys=True))
                await asyncio.sleep(max(0.01, cfg["tick_dt"] / 2))
        except (WebSocketDisconnect, RuntimeError):
            return

    return app


def serve(
    cfg: dict,
    out_dir: str | Path,
    host: str = "127.0.0.1",
    port: Optional[int] = None,
    ui_dir: Optional[str | Path] = None,
) -> None:
    """Run the service until interrupted (blocking)."""
    import uvicorn

    if ui_dir is None and Path("frontend/index.html").exists():
        ui_dir = "frontend"
    app = create_app(cfg, out_dir, ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port or cfg["service_port"], log_level="warning")
