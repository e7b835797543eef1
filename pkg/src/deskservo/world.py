"""Deterministic ground-plane world: unicycle robot, noisy simulated
detector, synthetic robot-crop renderer and a ground-truth recorder.

The world is advanced by a single owner; everything else reads immutable
values (poses, boxes, crops) produced per tick.  All randomness flows from
one seed through named child streams, so identical seeds and command
sequences reproduce runs bit for bit.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    DegenerateProjection,
    NonMonotonicTimestamp,
    NonPositiveDt,
    OutOfRange,
)
from .geometry import CameraModel, GroundPoint, ImagePoint, TWO_PI, ang_diff, wrap_angle


@dataclass(frozen=True)
class Pose2D:
    """Robot ground-plane state; heading canonical in [0, 2*pi)."""

    x: float
    y: float
    heading: float

    def __post_init__(self):
        object.__setattr__(self, "heading", float(wrap_angle(self.heading)))

    @property
    def position(self) -> GroundPoint:
        return GroundPoint(self.x, self.y)


@dataclass(frozen=True)
class RobotParams:
    """Unicycle command limits and footprint size."""

    radius_m: float = 0.14
    v_max: float = 0.5
    omega_max: float = 1.2

    def __post_init__(self):
        if self.radius_m <= 0 or self.v_max <= 0 or self.omega_max <= 0:
            raise ValueError("robot parameters must be positive")


@dataclass(frozen=True)
class DetectorNoise:
    """Imperfection model for the simulated detector."""

    center_sigma_px: float = 2.0
    size_sigma_px: float = 1.0
    dropout: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.center_sigma_px < 0 or self.size_sigma_px < 0:
            raise ValueError("jitter sigmas must be >= 0")
        if not 0.0 <= self.dropout <= 1.0:
            raise ValueError("dropout must be in [0, 1]")


NO_NOISE = DetectorNoise(center_sigma_px=0.0, size_sigma_px=0.0, dropout=0.0)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned detector box, pixel units."""

    center: ImagePoint
    width: float
    height: float
    t: float = 0.0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("box must have positive size")


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two axis-aligned boxes."""
    ax0, ax1 = a.center.u - a.width / 2, a.center.u + a.width / 2
    ay0, ay1 = a.center.v - a.height / 2, a.center.v + a.height / 2
    bx0, bx1 = b.center.u - b.width / 2, b.center.u + b.width / 2
    by0, by1 = b.center.v - b.height / 2, b.center.v + b.height / 2
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = a.width * a.height + b.width * b.height - inter
    return inter / union if union > 0 else 0.0


def step_unicycle(pose: Pose2D, v: float, omega: float, dt: float) -> Pose2D:
    """Exact constant-command arc integration of the unicycle model."""
    if dt <= 0:
        raise NonPositiveDt(f"dt={dt}")
    th = pose.heading
    if abs(omega) < 1e-9:
        return Pose2D(
            pose.x + v * math.cos(th) * dt,
            pose.y + v * math.sin(th) * dt,
            th + omega * dt,
        )
    th1 = th + omega * dt
    r = v / omega
    return Pose2D(
        pose.x + r * (math.sin(th1) - math.sin(th)),
        pose.y - r * (math.cos(th1) - math.cos(th)),
        th1,
    )


_FOOTPRINT_ANGLES = np.arange(8) * (TWO_PI / 8.0)
_FOOTPRINT_UNIT = np.column_stack([np.cos(_FOOTPRINT_ANGLES), np.sin(_FOOTPRINT_ANGLES)])


def footprint_box(cam: CameraModel, pose: Pose2D, params: RobotParams, t: float = 0.0) -> BoundingBox:
    """Noise-free box: AABB of 8 projected points of the footprint circle.

    The sample angles are fixed in the world frame, so the box does not
    depend on the robot's heading.
    """
    pts = np.array([pose.x, pose.y]) + params.radius_m * _FOOTPRINT_UNIT
    uv = cam.project_many(pts)
    lo = uv.min(axis=0)
    hi = uv.max(axis=0)
    return BoundingBox(
        center=ImagePoint(*(0.5 * (lo + hi))),
        width=float(hi[0] - lo[0]),
        height=float(hi[1] - lo[1]),
        t=t,
    )


def observe_box(
    cam: CameraModel,
    pose: Pose2D,
    params: RobotParams,
    noise: DetectorNoise,
    rng: np.random.Generator,
    t: float = 0.0,
) -> Optional[BoundingBox]:
    """Simulated detection: jittered footprint box, or None on dropout.

    Draws from ``rng`` in a fixed order regardless of the outcome, so the
    stream stays aligned across noise settings.
    """
    box = footprint_box(cam, pose, params, t)
    jit = rng.normal(size=4)
    drop = rng.uniform()
    if drop < noise.dropout:
        return None
    w = max(1e-6, box.width + noise.size_sigma_px * jit[2])
    h = max(1e-6, box.height + noise.size_sigma_px * jit[3])
    return BoundingBox(
        center=ImagePoint(
            box.center.u + noise.center_sigma_px * jit[0],
            box.center.v + noise.center_sigma_px * jit[1],
        ),
        width=w,
        height=h,
        t=t,
    )


def in_image_heading(cam: CameraModel, pose: Pose2D, eps: float = 1e-4) -> float:
    """Image-plane direction of an infinitesimal forward step, [0, 2*pi)."""
    p0 = cam.project(pose.position)
    p1 = cam.project(
        GroundPoint(pose.x + eps * math.cos(pose.heading), pose.y + eps * math.sin(pose.heading))
    )
    return float(wrap_angle(math.atan2(p1.v - p0.v, p1.u - p0.u)))


# --- synthetic robot crop ---------------------------------------------------

# asymmetric glyph in the robot body frame (x forward, units of footprint
# radius): a filled wedge pointing forward with a dark nose notch.  The
# asymmetry guarantees a unique 360-degree orientation signature.
_WEDGE = [(1.0, 0.0), (-0.75, 0.65), (-0.75, -0.65)]  # counter-clockwise
_NOTCH_CENTER = (0.45, 0.0)
_NOTCH_RADIUS = 0.16
_BODY_VAL = 0.85
_NOTCH_VAL = 0.25
_BACKGROUND_VAL = 0.15
_EDGE_SOFTNESS = 0.06
_N_BLOBS = 6


def render_crop(
    pose: Pose2D,
    cam: CameraModel,
    radius_m: float,
    noise_level: float,
    rng: np.random.Generator,
    size: int = 32,
    zoom: float = 1.45,
) -> np.ndarray:
    """Grayscale crop of the robot glyph as the camera would see it.

    The glyph is drawn in the ground frame and pushed through the local
    homography Jacobian, so it appears rotated to the robot's in-image
    heading and foreshortened like a real patch would be.  ``noise_level``
    in [0, 1] scales background clutter blobs and pixel noise.
    """
    jac = cam.jacobian(pose.position)
    if abs(np.linalg.det(jac)) < 1e-12:
        raise DegenerateProjection("singular projection Jacobian")
    r_proj = radius_m * math.sqrt(abs(np.linalg.det(jac)))  # mean projected radius, px
    half_px = zoom * r_proj
    c = (size - 1) / 2.0
    scale = half_px / c  # px per crop cell
    ii, jj = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    duv = np.stack([(jj - c) * scale, (ii - c) * scale])  # image-plane offsets
    g = np.linalg.inv(jac) @ duv.reshape(2, -1)  # ground offsets, metres
    ct, st = math.cos(pose.heading), math.sin(pose.heading)
    bx = (ct * g[0] + st * g[1]) / radius_m
    by = (-st * g[0] + ct * g[1]) / radius_m

    if noise_level > 0:
        img = np.full(size * size, _BACKGROUND_VAL)
        blob = rng.uniform(size=(_N_BLOBS, 4))  # cu, cv, sigma, amplitude
        pix = rng.normal(size=size * size)
        flat_i = ii.reshape(-1)
        flat_j = jj.reshape(-1)
        for cu, cv, s, amp in blob:
            sig = 1.5 + 3.0 * s
            a = (amp - 0.5) * 0.7 * noise_level
            d2 = (flat_j - cu * size) ** 2 + (flat_i - cv * size) ** 2
            img += a * np.exp(-d2 / (2 * sig * sig))
    else:
        img = np.full(size * size, _BACKGROUND_VAL)
        pix = None

    # wedge body: soft indicator from the min signed edge distance
    sd = np.full(bx.shape, np.inf)
    n = len(_WEDGE)
    for k in range(n):
        (x1, y1), (x2, y2) = _WEDGE[k], _WEDGE[(k + 1) % n]
        ex, ey = x2 - x1, y2 - y1
        elen = math.hypot(ex, ey)
        sd = np.minimum(sd, ((bx - x1) * ey - (by - y1) * ex) / elen * -1.0)
    alpha = np.clip((sd + _EDGE_SOFTNESS) / (2 * _EDGE_SOFTNESS), 0.0, 1.0)
    img = img * (1 - alpha) + _BODY_VAL * alpha

    dn = np.hypot(bx - _NOTCH_CENTER[0], by - _NOTCH_CENTER[1])
    alpha_n = np.clip((_NOTCH_RADIUS - dn + _EDGE_SOFTNESS) / (2 * _EDGE_SOFTNESS), 0.0, 1.0)
    img = img * (1 - alpha_n) + _NOTCH_VAL * alpha_n

    if pix is not None:
        img = img + 0.06 * noise_level * pix
    return np.clip(img, 0.0, 1.0).reshape(size, size)


class GroundTruthLog:
    """Time series of true poses; the evaluation-only position reference."""

    def __init__(self):
        self._ts: list[float] = []
        self._poses: list[Pose2D] = []

    def __len__(self) -> int:
        return len(self._ts)

    @property
    def timestamps(self) -> list[float]:
        return list(self._ts)

    @property
    def poses(self) -> list[Pose2D]:
        return list(self._poses)

    def append(self, t: float, pose: Pose2D) -> None:
        if self._ts and t <= self._ts[-1]:
            raise NonMonotonicTimestamp(f"t={t} after t={self._ts[-1]}")
        self._ts.append(float(t))
        self._poses.append(pose)

    def sample(self, t: float) -> Pose2D:
        """Linear position / shortest-arc heading interpolation at ``t``."""
        if not self._ts:
            raise OutOfRange("empty log")
        if t < self._ts[0] or t > self._ts[-1]:
            raise OutOfRange(f"t={t} outside [{self._ts[0]}, {self._ts[-1]}]")
        i = bisect.bisect_right(self._ts, t)
        if i == len(self._ts):
            return self._poses[-1]
        if i == 0:
            return self._poses[0]
        t0, t1 = self._ts[i - 1], self._ts[i]
        a, b = self._poses[i - 1], self._poses[i]
        f = (t - t0) / (t1 - t0)
        return Pose2D(
            a.x + f * (b.x - a.x),
            a.y + f * (b.y - a.y),
            a.heading + f * ang_diff(b.heading, a.heading),
        )


class World:
    """Single-owner simulation state: one robot, one camera, one clock."""

    def __init__(
        self,
        cam: CameraModel,
        robot: RobotParams,
        noise: DetectorNoise,
        start: Pose2D,
        dt: float = 0.05,
        seed: int = 0,
        crop_size: int = 32,
        crop_noise: float = 0.5,
        crop_zoom: float = 1.45,
    ):
        if dt <= 0:
            raise NonPositiveDt(f"dt={dt}")
        self.cam = cam
        self.robot = robot
        self.noise = noise
        self.dt = dt
        self.seed = seed
        self.crop_size = crop_size
        self.crop_noise = crop_noise
        self.crop_zoom = crop_zoom
        self.t = 0.0
        self.pose = start
        self.log = GroundTruthLog()
        self.log.append(self.t, self.pose)
        kids = np.random.SeedSequence(seed).spawn(3)
        self._rng_det = np.random.default_rng(kids[0])
        self._rng_crop = np.random.default_rng(kids[1])
        self.rng_behavior = np.random.default_rng(kids[2])

    def step(self, v: float, omega: float, dt: Optional[float] = None) -> None:
        """Clamp the command to robot limits and advance one tick."""
        h = self.dt if dt is None else dt
        v = max(-self.robot.v_max, min(self.robot.v_max, v))
        omega = max(-self.robot.omega_max, min(self.robot.omega_max, omega))
        self.pose = step_unicycle(self.pose, v, omega, h)
        self.t += h
        self.log.append(self.t, self.pose)

    def observe(self) -> Optional[BoundingBox]:
        return observe_box(self.cam, self.pose, self.robot, self.noise, self._rng_det, self.t)

    def observe_true(self) -> BoundingBox:
        """Noise-free box at the current pose (consumes no randomness)."""
        return footprint_box(self.cam, self.pose, self.robot, self.t)

    def crop(self) -> np.ndarray:
        return render_crop(
            self.pose,
            self.cam,
            self.robot.radius_m,
            self.crop_noise,
            self._rng_crop,
            self.crop_size,
            self.crop_zoom,
        )

    def true_image_heading(self) -> float:
        return in_image_heading(self.cam, self.pose)
