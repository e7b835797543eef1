"""In-process autonomy pipeline: frame -> detector -> orientation
estimator -> controller -> robot, with full per-tick recording.

The stages communicate only through the PipelineTick payload, so any of
them could move out of process behind the same contract.  Runs are
seeded per run index and reproduce bit for bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import config as cfgmod
from .control import (
    DONE,
    ControllerGains,
    ControllerState,
    ImagePose,
    control_step,
)
from .errors import EmptyRun, ModelLoadError, Timeout
from .estimator import AnyParams, DegenerateExpectation, forward, forward_regression, load_checkpoint
from .estimator import RegressionParams
from .geometry import GroundPoint, ImagePoint, ImageTrack, ang_diff, cross_track
from .world import BoundingBox, Pose2D, World, in_image_heading


@dataclass(frozen=True)
class PipelineTick:
    """Message contract between pipeline stages, one per control tick."""

    t: float
    tick: int
    box: Optional[BoundingBox]
    crop: Optional[np.ndarray]
    estimate: Optional[ImagePose]
    v: float
    omega: float
    mode: str
    gt_x: float
    gt_y: float
    gt_heading: float
    est_ct_px: Optional[float] = None


@dataclass
class RunRecord:
    """One autonomy run: config snapshot, ticks, derived metrics."""

    run_id: int
    seed: int
    gt_pose_mode: bool
    config: dict
    track_px: list
    ticks: list[PipelineTick] = field(default_factory=list)
    completed: bool = False
    metrics: dict = field(default_factory=dict)


def missed_detection_policy(
    last_command: tuple[float, float],
    time_since_detection_s: float,
    hold_s: float = 0.5,
) -> tuple[float, float]:
    """Hold the previous command briefly through detector dropouts, then
    stop until the robot is seen again."""
    if time_since_detection_s <= hold_s:
        return last_command
    return (0.0, 0.0)


def _run_seed(base_seed: int, run_index: int) -> int:
    return int(np.random.SeedSequence([base_seed, run_index]).generate_state(1)[0])


class AutonomyDriver:
    """Tick-stepped autonomy loop over one world and one track."""

    def __init__(
        self,
        world: World,
        track: ImageTrack,
        gains: ControllerGains,
        params: Optional[AnyParams] = None,
        gt_pose: bool = False,
        record_crops: bool = False,
        hold_s: float = 0.5,
    ):
        if not gt_pose and params is None:
            raise ValueError("need model parameters unless running in ground-truth-pose mode")
        self.world = world
        self.track = track
        self.gains = gains
        self.params = params
        self.gt_pose = gt_pose
        self.record_crops = record_crops
        self.hold_s = hold_s
        self.state = ControllerState()
        self.ticks: list[PipelineTick] = []
        self._tick_no = 0
        self._last_cmd = (0.0, 0.0)
        self._miss_time = 0.0

    @property
    def done(self) -> bool:
        return self.state.mode == DONE

    def _estimate(self, box, crop) -> Optional[ImagePose]:
        if self.gt_pose:
            pose = self.world.pose
            return ImagePose(
                position=self.world.cam.project(pose.position),
                heading=in_image_heading(self.world.cam, pose),
            )
        if box is None:
            return None
        if isinstance(self.params, RegressionParams):
            heading = forward_regression(self.params, crop)
        else:
            try:
                heading = forward(self.params, crop)[2]
            except DegenerateExpectation:
                return None
        return ImagePose(position=box.center, heading=heading)

    def step(self) -> PipelineTick:
        world = self.world
        t = world.t
        box = world.observe()
        crop = world.crop()
        est = self._estimate(box, crop)

        if est is None:
            self._miss_time += world.dt
            v, omega = missed_detection_policy(self._last_cmd, self._miss_time, self.hold_s)
            ct = None
        else:
            self._miss_time = 0.0
            v, omega, self.state = control_step(est, self.track, self.state, self.gains, world.dt)
            self._last_cmd = (v, omega)
            seg = self.track.segment(min(self.state.segment, self.track.n_segments - 1))
            ct = cross_track(est.position, seg)

        tick = PipelineTick(
            t=t,
            tick=self._tick_no,
            box=box,
            crop=crop if self.record_crops else None,
            estimate=est,
            v=v,
            omega=omega,
            mode=self.state.mode,
            gt_x=world.pose.x,
            gt_y=world.pose.y,
            gt_heading=world.pose.heading,
            est_ct_px=ct,
        )
        self.ticks.append(tick)
        self._tick_no += 1
        world.step(v, omega)
        return tick


def start_pose_for_track(cam, track: ImageTrack) -> Pose2D:
    """Ground pose at the first waypoint, heading along the first segment."""
    g0 = cam.unproject(track.waypoints[0])
    g1 = cam.unproject(track.waypoints[1])
    return Pose2D(g0.x, g0.y, math.atan2(g1.y - g0.y, g1.x - g0.x))


def run_autonomy(
    cfg: dict,
    track: Optional[ImageTrack] = None,
    params: Optional[AnyParams | str | Path] = None,
    n_runs: Optional[int] = None,
    gt_pose: bool = False,
    record_crops: bool = False,
) -> list[RunRecord]:
    """Execute seeded repeated runs of the full pipeline on one track."""
    if isinstance(params, (str, Path)):
        params = load_checkpoint(params)
    if track is None:
        track = cfgmod.make_track(cfg)
    if n_runs is None:
        n_runs = cfg["autonomy_n_runs"]
    gains = make_gains(cfg)
    cam = cfgmod.make_camera(cfg)
    timeout_s = cfg["autonomy_timeout_s"]
    records = []
    for i in range(n_runs):
        seed = _run_seed(cfg["seed"], i)
        world = World(
            cam=cam,
            robot=cfgmod.make_robot(cfg),
            noise=cfgmod.make_noise(cfg, zero=gt_pose),
            start=start_pose_for_track(cam, track),
            dt=cfg["tick_dt"],
            seed=seed,
            crop_size=cfg["crop_size_px"],
            crop_noise=0.0 if gt_pose else cfg["crop_noise_level"],
            crop_zoom=cfg["crop_zoom"],
        )
        driver = AutonomyDriver(
            world, track, gains, params=params, gt_pose=gt_pose, record_crops=record_crops
        )
        while not driver.done:
            if world.t > timeout_s:
                raise Timeout(f"run {i} exceeded {timeout_s}s of simulated time")
            driver.step()
        rec = RunRecord(
            run_id=i,
            seed=seed,
            gt_pose_mode=gt_pose,
            config=dict(cfg),
            track_px=[[p.u, p.v] for p in track.waypoints],
            ticks=driver.ticks,
            completed=True,
        )
        rec.metrics = compute_run_metrics(rec, ground_track_for(cfg, track))
        records.append(rec)
    return records


def make_gains(cfg: dict) -> ControllerGains:
    return ControllerGains(
        kp_ct=cfg["gain_kp_ct"],
        kd_ct=cfg["gain_kd_ct"],
        kp_h=cfg["gain_kp_h"],
        kd_h=cfg["gain_kd_h"],
        v_nom=cfg["control_v_nom"],
        capture_radius_px=cfg["capture_radius_px"],
        spin_exit_tol_rad=cfg["spin_exit_tol_rad"],
        v_max=cfg["robot_v_max"],
        omega_max=cfg["robot_omega_max"],
    )


def ground_track_for(cfg: dict, track: ImageTrack) -> list[GroundPoint]:
    """The ground-plane polyline the image track corresponds to."""
    cam = cfgmod.make_camera(cfg)
    return [cam.unproject(p) for p in track.waypoints]


def _distance_to_ground_polyline(x: float, y: float, pts: Sequence[GroundPoint]) -> float:
    best = math.inf
    for a, b in zip(pts, pts[1:]):
        dx, dy = b.x - a.x, b.y - a.y
        L2 = dx * dx + dy * dy
        t = 0.0 if L2 == 0 else min(1.0, max(0.0, ((x - a.x) * dx + (y - a.y) * dy) / L2))
        qx, qy = a.x + t * dx, a.y + t * dy
        best = min(best, math.hypot(x - qx, y - qy))
    return best


def compute_run_metrics(record: RunRecord, ground_track: Sequence[GroundPoint]) -> dict:
    """Ground-plane cross-track aggregates plus the in-image angular error
    of the heading estimate against the true image heading."""
    if not record.ticks:
        raise EmptyRun("record has no ticks")
    cam = cfgmod.make_camera(record.config)
    cross = []
    ang_errs = []
    for tk in record.ticks:
        e = _distance_to_ground_polyline(tk.gt_x, tk.gt_y, ground_track)
        cross.append((tk.t, e))
        if tk.estimate is not None:
            true_psi = in_image_heading(cam, Pose2D(tk.gt_x, tk.gt_y, tk.gt_heading))
            ang_errs.append(abs(ang_diff(tk.estimate.heading, true_psi)))
    errs = np.array([e for _, e in cross])
    out = {
        "n_ticks": len(record.ticks),
        "duration_s": record.ticks[-1].t - record.ticks[0].t,
        "cross_track_max_m": float(errs.max()),
        "cross_track_mean_m": float(errs.mean()),
        "cross_track_rms_m": float(np.sqrt(np.mean(errs**2))),
        "cross_track_series": [[t, e] for t, e in cross],
    }
    if ang_errs:
        out["heading_error_median_deg"] = float(np.degrees(np.median(ang_errs)))
    return out


# --- persistence -----------------------------------------------------------------

_RUN_FORMAT = "deskservo-run"
_VERSION = 1


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _tick_json(tk: PipelineTick) -> dict:
    return {
        "t": tk.t,
        "tick": tk.tick,
        "box": None
        if tk.box is None
        else [tk.box.center.u, tk.box.center.v, tk.box.width, tk.box.height],
        "est": None
        if tk.estimate is None
        else [tk.estimate.position.u, tk.estimate.position.v, tk.estimate.heading],
        "v": tk.v,
        "omega": tk.omega,
        "mode": tk.mode,
        "gt": [tk.gt_x, tk.gt_y, tk.gt_heading],
        "ct": tk.est_ct_px,
    }


def _tick_from_json(row: dict) -> PipelineTick:
    box = row["box"]
    est = row["est"]
    return PipelineTick(
        t=row["t"],
        tick=row["tick"],
        box=None
        if box is None
        else BoundingBox(center=ImagePoint(box[0], box[1]), width=box[2], height=box[3], t=row["t"]),
        crop=None,
        estimate=None if est is None else ImagePose(position=ImagePoint(est[0], est[1]), heading=est[2]),
        v=row["v"],
        omega=row["omega"],
        mode=row["mode"],
        gt_x=row["gt"][0],
        gt_y=row["gt"][1],
        gt_heading=row["gt"][2],
        est_ct_px=row["ct"],
    )


def save_run(path: str | Path, record: RunRecord) -> None:
    """One JSON header line plus one line per tick; crops are not persisted."""
    with open(path, "w") as f:
        f.write(
            _dumps(
                {
                    "format": _RUN_FORMAT,
                    "version": _VERSION,
                    "run_id": record.run_id,
                    "seed": record.seed,
                    "gt_pose_mode": record.gt_pose_mode,
                    "config": record.config,
                    "track_px": record.track_px,
                    "completed": record.completed,
                    "metrics": record.metrics,
                }
            )
            + "\n"
        )
        for tk in record.ticks:
            f.write(_dumps(_tick_json(tk)) + "\n")


def load_run(path: str | Path) -> RunRecord:
    with open(path) as f:
        header = json.loads(f.readline())
        if header.get("format") != _RUN_FORMAT:
            raise ModelLoadError(f"not a run record: {path}")
        rec = RunRecord(
            run_id=header["run_id"],
            seed=header["seed"],
            gt_pose_mode=header["gt_pose_mode"],
            config=header["config"],
            track_px=header["track_px"],
            completed=header["completed"],
            metrics=header["metrics"],
        )
        rec.ticks = [_tick_from_json(json.loads(line)) for line in f]
    return rec


def save_runs(out_dir: str | Path, records: Sequence[RunRecord]) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": "deskservo-run-manifest",
        "version": _VERSION,
        "n_runs": len(records),
        "runs": [f"run_{r.run_id:03d}.jsonl" for r in records],
        "gt_pose_mode": records[0].gt_pose_mode if records else None,
        "max_cross_track_m": max((r.metrics["cross_track_max_m"] for r in records), default=None),
    }
    with open(out / "manifest.json", "w") as f:
        f.write(_dumps(manifest) + "\n")
    for r in records:
        save_run(out / f"run_{r.run_id:03d}.jsonl", r)
