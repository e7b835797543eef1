"""Weak-supervision data generation.

Two collection behaviours produce training data without manual labelling
of individual frames:

- spin-on-the-spot sessions: the robot performs full revolutions at a few
  image locations; only the first and last frame of each session carry a
  (simulated) human box annotation and everything between is interpolated.
  The sessions also calibrate the open-loop rotation rate.
- geofenced wandering: the robot drives straight inside an operator-drawn
  polygon, spinning to a random new heading whenever it approaches the
  boundary.  Orientation labels are the directions of bounding-box center
  displacement between frames a short time apart.
"""

from __future__ import annotations

import base64
import json
import math
from bisect import bisect_left
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import (
    DegenerateProjection,
    EmptyInput,
    InsufficientData,
    MissingEndpointAnnotation,
    RobotLostTimeout,
    UnreachableLocation,
)
from .geometry import (
    CameraModel,
    Geofence,
    ImagePoint,
    TWO_PI,
    ang_diff,
    contains,
    ray_exit_distance,
    wrap_angle,
)
from .world import BoundingBox, World


# --- spin-on-the-spot sessions ----------------------------------------------


@dataclass
class SpinSession:
    """Frames of one on-the-spot spinning bout.

    Only the first and last frame carry a box annotation; intermediate
    entries are (timestamp, None) and get boxes by interpolation.
    """

    location_index: int
    frames: list[tuple[float, Optional[BoundingBox]]]
    spin_count: int = 3
    commanded_rotation: float = 0.0

    def first_annotation(self) -> Optional[BoundingBox]:
        return self.frames[0][1] if self.frames else None

    def last_annotation(self) -> Optional[BoundingBox]:
        return self.frames[-1][1] if self.frames else None

    def annotation_count(self) -> int:
        return sum(1 for _, b in self.frames if b is not None)


def _drive_to(world: World, target_x: float, target_y: float, tol_m: float = 0.03) -> None:
    """Scripted point-to-point drive standing in for manual joysticking."""
    budget = world.t + 120.0
    while world.t < budget:
        dx, dy = target_x - world.pose.x, target_y - world.pose.y
        dist = math.hypot(dx, dy)
        if dist < tol_m:
            return
        bearing = math.atan2(dy, dx)
        err = ang_diff(bearing, world.pose.heading)
        omega = max(-world.robot.omega_max, min(world.robot.omega_max, 2.5 * err))
        v = world.robot.v_max * max(0.0, math.cos(err)) * min(1.0, dist / 0.3)
        world.step(v, omega)
    raise RuntimeError("drive-to target did not converge")


def run_spin_collection(
    world: World,
    cam: CameraModel,
    locations: Sequence[ImagePoint],
    spin_count: int = 3,
    manual_annotations: Optional[dict[int, tuple[BoundingBox, BoundingBox]]] = None,
) -> list[SpinSession]:
    """Drive to each image location and spin ``spin_count`` full turns.

    Endpoint annotations default to the noise-free ground-truth box
    (standing in for a human click); ``manual_annotations`` may override
    them per location index to preserve the real annotation workflow.
    """
    sessions = []
    for idx, loc in enumerate(locations):
        if not (0 <= loc.u < cam.width and 0 <= loc.v < cam.height):
            raise UnreachableLocation(f"location {idx} outside the frame: {loc}")
        try:
            gp = cam.unproject(loc)
            reproj = cam.project(gp)
        except DegenerateProjection as e:
            raise UnreachableLocation(f"location {idx}: {e}") from e
        if math.hypot(reproj.u - loc.u, reproj.v - loc.v) > 1e-6:
            raise UnreachableLocation(f"location {idx} does not unproject consistently")
        w = float(cam.H[2] @ np.array([gp.x, gp.y, 1.0]))
        if w <= 0:
            raise UnreachableLocation(f"location {idx} unprojects behind the camera")
        _drive_to(world, gp.x, gp.y)

        total = spin_count * TWO_PI
        omega = world.robot.omega_max
        frames: list[tuple[float, Optional[BoundingBox]]] = [(world.t, world.observe_true())]
        turned = 0.0
        while turned + omega * world.dt <= total - 1e-12:
            world.step(0.0, omega)
            turned += omega * world.dt
            frames.append((world.t, None))
        rem = (total - turned) / omega
        if rem > 1e-9:
            world.step(0.0, omega, dt=rem)
            frames.append((world.t, None))
        frames[-1] = (frames[-1][0], world.observe_true())
        if manual_annotations and idx in manual_annotations:
            first, last = manual_annotations[idx]
            frames[0] = (frames[0][0], first)
            frames[-1] = (frames[-1][0], last)
        sessions.append(
            SpinSession(
                location_index=idx,
                frames=frames,
                spin_count=spin_count,
                commanded_rotation=total,
            )
        )
    return sessions


def interpolate_boxes(session: SpinSession) -> list[tuple[float, BoundingBox]]:
    """Linear box interpolation between the two endpoint annotations."""
    first = session.first_annotation()
    last = session.last_annotation()
    if first is None or last is None:
        raise MissingEndpointAnnotation(f"session {session.location_index}")
    t0, t1 = session.frames[0][0], session.frames[-1][0]
    out = []
    for t, _ in session.frames:
        f = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
        out.append(
            (
                t,
                BoundingBox(
                    center=ImagePoint(
                        first.center.u + f * (last.center.u - first.center.u),
                        first.center.v + f * (last.center.v - first.center.v),
                    ),
                    width=first.width + f * (last.width - first.width),
                    height=first.height + f * (last.height - first.height),
                    t=t,
                ),
            )
        )
    return out


def calibrate_rotation(sessions: Sequence[SpinSession]) -> float:
    """Mean open-loop angular speed implied by the spin sessions (rad/s)."""
    if not sessions:
        raise EmptyInput("no spin sessions")
    rates = []
    for s in sessions:
        elapsed = s.frames[-1][0] - s.frames[0][0]
        if elapsed <= 0:
            raise EmptyInput(f"session {s.location_index} has no duration")
        rates.append(s.spin_count * TWO_PI / elapsed)
    return float(np.mean(rates))


# --- geofenced wandering ------------------------------------------------------


@dataclass
class WanderFrame:
    """One camera tick of the wander log."""

    t: float
    box: Optional[BoundingBox]
    crop: np.ndarray
    spinning: bool


class WanderDriver:
    """Tick-by-tick wander behaviour: drive straight, spin at the boundary.

    The boundary test is predictive: a spin starts when the box center is
    about to leave the fence (short ray lookahead along the estimated
    motion direction), with plain center-outside as a fallback, so that
    spins happen inside the operator polygon.  The new heading is sampled
    uniformly among directions with enough clearance back into the fence.
    """

    def __init__(
        self,
        world: World,
        fence: Geofence,
        rng: np.random.Generator,
        v_nom: float = 0.4,
        omega_cal: Optional[float] = None,
        lookahead_px: float = 60.0,
        min_clearance_px: float = 150.0,
        miss_stop_s: float = 0.5,
        miss_lost_s: float = 5.0,
    ):
        self.world = world
        self.fence = fence
        self.rng = rng
        self.v_nom = v_nom
        self.omega_cal = omega_cal if omega_cal is not None else world.robot.omega_max
        self.lookahead_px = lookahead_px
        self.min_clearance_px = min_clearance_px
        self.miss_stop_s = miss_stop_s
        self.miss_lost_s = miss_lost_s
        centroid = fence.centroid()
        self._parity = world.cam.orientation_sign(world.cam.unproject(centroid))
        self._phase = "drive"
        self._est_dir: Optional[float] = None
        self._last_center: Optional[ImagePoint] = None
        self._drive_ticks = 0
        self._spin_ticks = 0
        self._spin_omega = 0.0
        self._miss_time = 0.0
        self.frames: list[WanderFrame] = []

    def _sample_new_heading(self, center: ImagePoint) -> float:
        for _ in range(60):
            cand = self.rng.uniform(0.0, TWO_PI)
            if ray_exit_distance(self.fence, center, cand) >= self.min_clearance_px:
                return cand
        c = self.fence.centroid()
        return float(wrap_angle(math.atan2(c.v - center.v, c.u - center.u)))

    def _begin_spin(self, center: ImagePoint) -> None:
        target = self._sample_new_heading(center)
        if self._est_dir is not None:
            delta = ang_diff(target, self._est_dir)
        else:
            delta = float(self.rng.uniform(math.pi / 2, 3 * math.pi / 2)) * (
                1.0 if self.rng.uniform() < 0.5 else -1.0
            )
        duration = abs(delta) / self.omega_cal
        self._spin_ticks = max(1, round(duration / self.world.dt))
        self._spin_omega = self._parity * math.copysign(self.world.robot.omega_max, delta)
        self._phase = "spin"
        self._est_dir = None
        self._last_center = None
        self._drive_ticks = 0

    def step(self) -> WanderFrame:
        world = self.world
        t = world.t
        box = world.observe()
        crop = world.crop()

        if self._phase == "spin":
            cmd = (0.0, self._spin_omega)
            self._spin_ticks -= 1
            if self._spin_ticks <= 0:
                self._phase = "drive"
            frame = WanderFrame(t, box, crop, spinning=True)
            self.frames.append(frame)
            world.step(*cmd)
            return frame

        if box is None:
            self._miss_time += world.dt
            if self._miss_time > self.miss_lost_s:
                raise RobotLostTimeout(f"no detection for {self._miss_time:.2f}s at t={t:.2f}")
            cmd = (self.v_nom, 0.0) if self._miss_time <= self.miss_stop_s else (0.0, 0.0)
            frame = WanderFrame(t, box, crop, spinning=False)
            self.frames.append(frame)
            world.step(*cmd)
            return frame
        self._miss_time = 0.0

        center = box.center
        if self._last_center is not None:
            du, dv = center.u - self._last_center.u, center.v - self._last_center.v
            if math.hypot(du, dv) > 0.5:
                self._est_dir = float(wrap_angle(math.atan2(dv, du)))
        self._last_center = center
        self._drive_ticks += 1

        boundary = not contains(self.fence, center)
        if not boundary and self._est_dir is not None and self._drive_ticks >= 3:
            if ray_exit_distance(self.fence, center, self._est_dir) < self.lookahead_px:
                boundary = True
        if boundary:
            self._begin_spin(center)
            frame = WanderFrame(t, box, crop, spinning=True)
            self.frames.append(frame)
            world.step(0.0, self._spin_omega)
            self._spin_ticks -= 1
            if self._spin_ticks <= 0:
                self._phase = "drive"
            return frame

        frame = WanderFrame(t, box, crop, spinning=False)
        self.frames.append(frame)
        world.step(self.v_nom, 0.0)
        return frame


def run_geofenced_wander(
    world: World,
    cam: CameraModel,
    fence: Geofence,
    duration_s: float,
    rng: np.random.Generator,
    v_nom: float = 0.4,
    omega_cal: Optional[float] = None,
    lookahead_px: float = 60.0,
    min_clearance_px: float = 150.0,
    miss_stop_s: float = 0.5,
    miss_lost_s: float = 5.0,
) -> list[WanderFrame]:
    """Run the wander behaviour for ``duration_s`` of simulated time."""
    start_box = world.observe_true()
    if not contains(fence, start_box.center):
        raise ValueError("robot must start inside the geofence")
    driver = WanderDriver(
        world,
        fence,
        rng,
        v_nom=v_nom,
        omega_cal=omega_cal,
        lookahead_px=lookahead_px,
        min_clearance_px=min_clearance_px,
        miss_stop_s=miss_stop_s,
        miss_lost_s=miss_lost_s,
    )
    t_end = world.t + duration_s
    while world.t < t_end - 1e-9:
        driver.step()
    return driver.frames


# --- weak orientation labels ---------------------------------------------------


@dataclass
class OrientationLabel:
    """A crop with its motion-derived in-image orientation label."""

    t: float
    crop: np.ndarray
    phi: float
    displacement_px: float


def label_orientations(
    frames: Sequence[WanderFrame], dt_s: float = 0.25, tau_px: float = 5.0
) -> list[OrientationLabel]:
    """Box-to-box orientation labels from frame pairs ``dt_s`` apart.

    A label is emitted for frame t when a successor frame exists within
    dt_s/2 of t+dt_s, both frames have detections outside commanded
    spins, and the center displacement is at least ``tau_px``.
    """
    ts = [f.t for f in frames]
    labels = []
    for i, f in enumerate(frames):
        if f.spinning or f.box is None:
            continue
        target = f.t + dt_s
        j = bisect_left(ts, target)
        best = None
        for k in (j - 1, j, j + 1):
            if i < k < len(frames):
                err = abs(ts[k] - target)
                if best is None or err < best[0]:
                    best = (err, k)
        if best is None or best[0] > dt_s / 2:
            continue
        g = frames[best[1]]
        if g.spinning or g.box is None:
            continue
        du = g.box.center.u - f.box.center.u
        dv = g.box.center.v - f.box.center.v
        disp = math.hypot(du, dv)
        if disp >= tau_px:
            labels.append(
                OrientationLabel(
                    t=f.t,
                    crop=f.crop,
                    phi=float(wrap_angle(math.atan2(dv, du))),
                    displacement_px=disp,
                )
            )
    return labels


# --- augmentation ---------------------------------------------------------------


@dataclass(frozen=True)
class AugmentationParams:
    """Per-op value ranges and a shared independent enable probability."""

    brightness_delta: tuple[float, float] = (-0.15, 0.15)
    contrast: tuple[float, float] = (0.7, 1.3)
    blur_sigma: tuple[float, float] = (0.3, 1.0)
    noise_sigma: float = 0.03
    prob: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.prob <= 1.0:
            raise ValueError("enable probability must be in [0, 1]")
        for lo, hi in (self.brightness_delta, self.contrast, self.blur_sigma):
            if hi < lo:
                raise ValueError("invalid augmentation range")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be >= 0")


def augment(crop: np.ndarray, params: AugmentationParams, rng: np.random.Generator) -> np.ndarray:
    """Brightness / contrast / blur / additive-noise augmentation.

    Each op is applied independently with probability ``params.prob``;
    the output is clipped to [0, 1] and the label is untouched by design.
    """
    out = crop.astype(float, copy=True)
    enables = rng.uniform(size=4) < params.prob
    if enables[0]:
        out = out + rng.uniform(*params.brightness_delta)
    if enables[1]:
        out = 0.5 + (out - 0.5) * rng.uniform(*params.contrast)
    if enables[2]:
        out = ndimage.gaussian_filter(out, sigma=rng.uniform(*params.blur_sigma), mode="reflect")
    if enables[3]:
        out = out + params.noise_sigma * rng.normal(size=out.shape)
    return np.clip(out, 0.0, 1.0)


# --- chronological splits ---------------------------------------------------------


@dataclass
class Dataset:
    """Time-ordered labels with train/val/test marks.

    The test split is the chronologically last window; validation is the
    last tenth of the remaining (training) entries by count.
    """

    entries: tuple[OrientationLabel, ...]
    splits: tuple[str, ...]

    def _select(self, name: str) -> list[OrientationLabel]:
        return [e for e, s in zip(self.entries, self.splits) if s == name]

    def train_entries(self) -> list[OrientationLabel]:
        return self._select("train")

    def val_entries(self) -> list[OrientationLabel]:
        return self._select("val")

    def test_entries(self) -> list[OrientationLabel]:
        return self._select("test")


def scarce_subset(ds: Dataset, fraction: float = 0.1) -> Dataset:
    """Dataset restricted to the chronologically first ``fraction`` of the
    non-test entries (validation re-carved), keeping the same test split."""
    pool = [e for e, s in zip(ds.entries, ds.splits) if s in ("train", "val")]
    test = ds.test_entries()
    n = max(1, int(len(pool) * fraction))
    head = pool[:n]
    n_val = len(head) // 10
    marks = ["train"] * (len(head) - n_val) + ["val"] * n_val + ["test"] * len(test)
    return Dataset(entries=tuple(head + test), splits=tuple(marks))


def split(entries: Sequence[OrientationLabel], test_duration_s: float) -> Dataset:
    """Chronological split: trailing ``test_duration_s`` window is test."""
    if not entries:
        raise InsufficientData("no labels to split")
    ts = [e.t for e in entries]
    if any(b < a for a, b in zip(ts, ts[1:])):
        raise ValueError("labels must be time ordered")
    span = ts[-1] - ts[0]
    if test_duration_s > 0 and span <= test_duration_s:
        raise InsufficientData(f"entries span {span:.1f}s <= test window {test_duration_s:.1f}s")
    cutoff = ts[-1] - test_duration_s
    n_train_all = sum(1 for t in ts if t <= cutoff) if test_duration_s > 0 else len(ts)
    n_val = n_train_all // 10
    marks = []
    for i in range(len(entries)):
        if i >= n_train_all:
            marks.append("test")
        elif i >= n_train_all - n_val:
            marks.append("val")
        else:
            marks.append("train")
    return Dataset(entries=tuple(entries), splits=tuple(marks))


# --- persistence -------------------------------------------------------------------

_LOG_FORMAT = "deskservo-wander-log"
_LABELS_FORMAT = "deskservo-labels"
_VERSION = 1


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _crop_to_b64(crop: np.ndarray) -> str:
    return base64.b64encode(crop.astype("<f4").tobytes()).decode("ascii")


def _crop_from_b64(s: str, size: int) -> np.ndarray:
    raw = np.frombuffer(base64.b64decode(s), dtype="<f4")
    return raw.reshape(size, size).astype(float)


def _box_json(box: Optional[BoundingBox]):
    if box is None:
        return None
    return [box.center.u, box.center.v, box.width, box.height]


def _box_from_json(row, t: float) -> Optional[BoundingBox]:
    if row is None:
        return None
    return BoundingBox(center=ImagePoint(row[0], row[1]), width=row[2], height=row[3], t=t)


def save_wander_log(path: str | Path, frames: Sequence[WanderFrame], crop_size: int) -> None:
    with open(path, "w") as f:
        f.write(_dumps({"format": _LOG_FORMAT, "version": _VERSION, "crop_size": crop_size}) + "\n")
        for fr in frames:
            f.write(
                _dumps(
                    {
                        "t": fr.t,
                        "box": _box_json(fr.box),
                        "crop": _crop_to_b64(fr.crop),
                        "spinning": fr.spinning,
                    }
                )
                + "\n"
            )


def load_wander_log(path: str | Path) -> list[WanderFrame]:
    with open(path) as f:
        header = json.loads(f.readline())
        if header.get("format") != _LOG_FORMAT:
            raise ValueError(f"not a wander log: {path}")
        size = header["crop_size"]
        frames = []
        for line in f:
            row = json.loads(line)
            frames.append(
                WanderFrame(
                    t=row["t"],
                    box=_box_from_json(row["box"], row["t"]),
                    crop=_crop_from_b64(row["crop"], size),
                    spinning=row["spinning"],
                )
            )
    return frames


def save_labels(path: str | Path, labels: Sequence[OrientationLabel], crop_size: int) -> None:
    with open(path, "w") as f:
        f.write(_dumps({"format": _LABELS_FORMAT, "version": _VERSION, "crop_size": crop_size}) + "\n")
        for lb in labels:
            f.write(
                _dumps(
                    {
                        "t": lb.t,
                        "crop": _crop_to_b64(lb.crop),
                        "phi": lb.phi,
                        "disp": lb.displacement_px,
                    }
                )
                + "\n"
            )


def load_labels(path: str | Path) -> list[OrientationLabel]:
    with open(path) as f:
        header = json.loads(f.readline())
        if header.get("format") != _LABELS_FORMAT:
            raise ValueError(f"not a labels file: {path}")
        size = header["crop_size"]
        labels = []
        for line in f:
            row = json.loads(line)
            labels.append(
                OrientationLabel(
                    t=row["t"],
                    crop=_crop_from_b64(row["crop"], size),
                    phi=row["phi"],
                    displacement_px=row["disp"],
                )
            )
    return labels


def save_dataset(path: str | Path, dataset: Dataset, crop_size: int) -> None:
    with open(path, "w") as f:
        f.write(
            _dumps({"format": _LABELS_FORMAT, "version": _VERSION, "crop_size": crop_size, "split": True})
            + "\n"
        )
        for lb, mark in zip(dataset.entries, dataset.splits):
            f.write(
                _dumps(
                    {
                        "t": lb.t,
                        "crop": _crop_to_b64(lb.crop),
                        "phi": lb.phi,
                        "disp": lb.displacement_px,
                        "split": mark,
                    }
                )
                + "\n"
            )


def load_dataset(path: str | Path) -> Dataset:
    with open(path) as f:
        header = json.loads(f.readline())
        if header.get("format") != _LABELS_FORMAT or not header.get("split"):
            raise ValueError(f"not a dataset file: {path}")
        size = header["crop_size"]
        entries, marks = [], []
        for line in f:
            row = json.loads(line)
            entries.append(
                OrientationLabel(
                    t=row["t"],
                    crop=_crop_from_b64(row["crop"], size),
                    phi=row["phi"],
                    displacement_px=row["disp"],
                )
            )
            marks.append(row["split"])
    return Dataset(entries=tuple(entries), splits=tuple(marks))


def save_sessions(path: str | Path, sessions: Sequence[SpinSession]) -> None:
    with open(path, "w") as f:
        f.write(_dumps({"format": "deskservo-spin-sessions", "version": _VERSION}) + "\n")
        for s in sessions:
            f.write(
                _dumps(
                    {
                        "location_index": s.location_index,
                        "spin_count": s.spin_count,
                        "commanded_rotation": s.commanded_rotation,
                        "frames": [[t, _box_json(b)] for t, b in s.frames],
                    }
                )
                + "\n"
            )


def load_sessions(path: str | Path) -> list[SpinSession]:
    with open(path) as f:
        header = json.loads(f.readline())
        if header.get("format") != "deskservo-spin-sessions":
            raise ValueError(f"not a spin session file: {path}")
        sessions = []
        for line in f:
            row = json.loads(line)
            sessions.append(
                SpinSession(
                    location_index=row["location_index"],
                    frames=[(t, _box_from_json(b, t)) for t, b in row["frames"]],
                    spin_count=row["spin_count"],
                    commanded_rotation=row["commanded_rotation"],
                )
            )
    return sessions
