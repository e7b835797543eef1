"""Ground-plane / image-plane geometry shared by the whole stack.

Conventions, fixed once and used everywhere:

- Image coordinates: u rightward, v downward, in pixels.  Points may lie
  outside the frame (the robot can leave the view).
- In-image angles: atan2(dv, du), canonicalized to [0, 2*pi).
- Ground coordinates: metres.  The ground->image map is a plane-to-plane
  homography; the world axes are chosen so the map is orientation
  preserving (Jacobian determinant > 0), i.e. a positive ground rotation
  is a positive in-image rotation.
- "Left of a segment" means the side reached by rotating the segment
  direction by -90 degrees in (u, v), which is the visual left when the
  image is displayed u-right / v-down.

All geometry is double precision; everything here is a pure function of
immutable values and safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DegenerateProjection, ZeroLengthSegment

TWO_PI = 2.0 * math.pi

_W_EPS = 1e-12  # homogeneous w below this is degenerate
_EDGE_EPS = 1e-9  # on-edge tolerance for containment, px


def wrap_angle(theta):
    """Canonicalize an angle (scalar or array) to [0, 2*pi)."""
    return np.mod(theta, TWO_PI)


def ang_diff(a, b):
    """Signed smallest rotation from b to a, in (-pi, pi].

    Accepts scalars or arrays (broadcast).  ang_diff(a, b) == -ang_diff(b, a)
    except when the result is exactly pi.
    """
    d = np.mod(np.asarray(a, dtype=float) - np.asarray(b, dtype=float), TWO_PI)
    d = np.where(d > math.pi, d - TWO_PI, d)
    return float(d) if d.ndim == 0 else d


@dataclass(frozen=True)
class GroundPoint:
    """A point on the ground plane, metres."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("ground point must be finite")


@dataclass(frozen=True)
class ImagePoint:
    """A point in image coordinates (u right, v down), pixels."""

    u: float
    v: float

    def __post_init__(self):
        if not (math.isfinite(self.u) and math.isfinite(self.v)):
            raise ValueError("image point must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.u, self.v], dtype=float)


@dataclass(frozen=True)
class CameraModel:
    """Plane-to-plane homography from ground (metres) to image (pixels).

    No intrinsics are exposed; the 3x3 matrix is the whole model.  The
    ``tilted`` constructor builds one from a physically plausible elevated
    camera and exists mainly as a test fixture and scenario default.
    """

    H: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        if H.shape != (3, 3):
            raise ValueError("H must be 3x3")
        if abs(np.linalg.det(H)) < 1e-15:
            raise ValueError("H must be invertible")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "_Hinv", np.linalg.inv(H))

    @classmethod
    def tilted(
        cls,
        height_m: float,
        tilt_deg: float,
        focal_px: float,
        width: int,
        height: int,
        pan_deg: float = 0.0,
        cam_x: float = 0.0,
        cam_y: float = 0.0,
    ) -> "CameraModel":
        """Camera ``height_m`` above the floor, pitched ``tilt_deg`` away
        from straight-down toward +y, panned ``pan_deg`` about the vertical.

        The world frame is (x, y) on the ground with its "z" axis taken
        toward the floor, so that at zero tilt u grows with x and v grows
        with y: the resulting homography is orientation preserving.
        """
        g = math.radians(tilt_deg)
        rho = math.radians(pan_deg)
        # camera axes expressed in world coordinates (z pointing down)
        x_cam = np.array([1.0, 0.0, 0.0])
        y_cam = np.array([0.0, math.cos(g), -math.sin(g)])
        z_cam = np.array([0.0, math.sin(g), math.cos(g)])
        rz = np.array(
            [
                [math.cos(rho), -math.sin(rho), 0.0],
                [math.sin(rho), math.cos(rho), 0.0],
                [0.0, 0.0, 1.0],
            ]
        )
        r_wc = rz @ np.column_stack([x_cam, y_cam, z_cam])
        r_cw = r_wc.T
        c = np.array([cam_x, cam_y, -height_m])
        k = np.array(
            [
                [focal_px, 0.0, width / 2.0],
                [0.0, focal_px, height / 2.0],
                [0.0, 0.0, 1.0],
            ]
        )
        m = np.column_stack([r_cw[:, 0], r_cw[:, 1], -r_cw @ c])
        return cls(H=k @ m, width=width, height=height)

    def project(self, p: GroundPoint) -> ImagePoint:
        """Map a ground point to the image plane."""
        m = self.H @ np.array([p.x, p.y, 1.0])
        if abs(m[2]) < _W_EPS:
            raise DegenerateProjection(f"w={m[2]:.3e} projecting {p}")
        return ImagePoint(m[0] / m[2], m[1] / m[2])

    def project_many(self, xy: np.ndarray) -> np.ndarray:
        """Vectorized project: (N,2) ground metres -> (N,2) image pixels."""
        xy = np.asarray(xy, dtype=float)
        m = xy @ self.H[:, :2].T + self.H[:, 2]
        w = m[:, 2]
        if np.any(np.abs(w) < _W_EPS):
            raise DegenerateProjection("near-zero homogeneous w in batch")
        return m[:, :2] / w[:, None]

    def unproject(self, p: ImagePoint) -> GroundPoint:
        """Inverse of project; only valid where the inverse map is regular."""
        m = self._Hinv @ np.array([p.u, p.v, 1.0])
        if abs(m[2]) < _W_EPS:
            raise DegenerateProjection(f"w={m[2]:.3e} unprojecting {p}")
        return GroundPoint(m[0] / m[2], m[1] / m[2])

    def jacobian(self, p: GroundPoint) -> np.ndarray:
        """2x2 d(u,v)/d(x,y) of the projection at a ground point."""
        m = self.H @ np.array([p.x, p.y, 1.0])
        w = m[2]
        if abs(w) < _W_EPS:
            raise DegenerateProjection(f"w={w:.3e} at {p}")
        u, v = m[0] / w, m[1] / w
        h = self.H
        return (
            np.array(
                [
                    [h[0, 0] - u * h[2, 0], h[0, 1] - u * h[2, 1]],
                    [h[1, 0] - v * h[2, 0], h[1, 1] - v * h[2, 1]],
                ]
            )
            / w
        )

    def orientation_sign(self, p: GroundPoint) -> float:
        """+1 if the map preserves rotation sense at p, else -1."""
        return 1.0 if np.linalg.det(self.jacobian(p)) > 0 else -1.0


def cross_track(p: ImagePoint, seg: tuple[ImagePoint, ImagePoint]) -> float:
    """Signed perpendicular distance (px) from p to the infinite line
    through ``seg``; positive on the left of the segment direction."""
    a, b = seg
    du, dv = b.u - a.u, b.v - a.v
    length = math.hypot(du, dv)
    if length <= 0.0:
        raise ZeroLengthSegment(f"segment {a} -> {b}")
    ru, rv = p.u - a.u, p.v - a.v
    return (ru * dv - rv * du) / length


@dataclass(frozen=True)
class ImageTrack:
    """An open polyline of waypoints in image space."""

    waypoints: tuple[ImagePoint, ...]

    def __init__(self, waypoints: Sequence[ImagePoint]):
        pts = tuple(waypoints)
        if len(pts) < 2:
            raise ValueError("track needs at least 2 waypoints")
        for a, b in zip(pts, pts[1:]):
            if math.hypot(b.u - a.u, b.v - a.v) <= 0.0:
                raise ValueError("consecutive waypoints must be distinct")
        object.__setattr__(self, "waypoints", pts)

    @property
    def n_segments(self) -> int:
        return len(self.waypoints) - 1

    def segment(self, i: int) -> tuple[ImagePoint, ImagePoint]:
        return self.waypoints[i], self.waypoints[i + 1]

    def segment_length(self, i: int) -> float:
        a, b = self.segment(i)
        return math.hypot(b.u - a.u, b.v - a.v)

    def direction_angle(self, i: int) -> float:
        """In-image direction of segment i, in [0, 2*pi)."""
        a, b = self.segment(i)
        return float(wrap_angle(math.atan2(b.v - a.v, b.u - a.u)))


class TrackProjection(NamedTuple):
    segment: int
    point: ImagePoint
    arc_length: float
    distance: float


def nearest_on_track(p: ImagePoint, track: ImageTrack) -> TrackProjection:
    """Closest point on the polyline (clamped to segment ends).

    Ties between segments break toward the lower index.
    """
    best = None
    cum = 0.0
    for i in range(track.n_segments):
        a, b = track.segment(i)
        du, dv = b.u - a.u, b.v - a.v
        seg_len = math.hypot(du, dv)
        t = ((p.u - a.u) * du + (p.v - a.v) * dv) / (seg_len * seg_len)
        t = min(1.0, max(0.0, t))
        qu, qv = a.u + t * du, a.v + t * dv
        dist = math.hypot(p.u - qu, p.v - qv)
        if best is None or dist < best.distance:
            best = TrackProjection(i, ImagePoint(qu, qv), cum + t * seg_len, dist)
        cum += seg_len
    return best


def _on_segment(pu, pv, au, av, bu, bv, eps=_EDGE_EPS) -> bool:
    du, dv = bu - au, bv - av
    length = math.hypot(du, dv)
    if length == 0.0:
        return math.hypot(pu - au, pv - av) <= eps
    cross = abs((pu - au) * dv - (pv - av) * du) / length
    if cross > eps:
        return False
    dot = (pu - au) * du + (pv - av) * dv
    return -eps * length <= dot <= length * length + eps * length


def _orient(ax, ay, bx, by, cx, cy) -> float:
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def _segments_intersect(p1, p2, p3, p4) -> bool:
    """True if closed segments p1p2 and p3p4 share any point."""
    d1 = _orient(*p3, *p4, *p1)
    d2 = _orient(*p3, *p4, *p2)
    d3 = _orient(*p1, *p2, *p3)
    d4 = _orient(*p1, *p2, *p4)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 != 0 and d2 != 0 and d3 != 0 and d4 != 0:
        return True
    for q, a, b in ((p1, p3, p4), (p2, p3, p4), (p3, p1, p2), (p4, p1, p2)):
        if _on_segment(q[0], q[1], a[0], a[1], b[0], b[1], eps=0.0):
            return True
    return False


@dataclass(frozen=True)
class Geofence:
    """A simple (non-self-intersecting) polygon in image space."""

    vertices: tuple[ImagePoint, ...]

    def __init__(self, vertices: Sequence[ImagePoint]):
        pts = tuple(vertices)
        if len(pts) < 3:
            raise ValueError("geofence needs at least 3 vertices")
        n = len(pts)
        coords = [(p.u, p.v) for p in pts]
        for i in range(n):
            if coords[i] == coords[(i + 1) % n]:
                raise ValueError("consecutive geofence vertices must be distinct")
        # no two non-adjacent edges may touch; adjacent edges only at the
        # shared vertex (no fold-back spikes)
        for i in range(n):
            a1, a2 = coords[i], coords[(i + 1) % n]
            for j in range(i + 1, n):
                if j == i or (j + 1) % n == i or (i + 1) % n == j:
                    continue
                b1, b2 = coords[j], coords[(j + 1) % n]
                if _segments_intersect(a1, a2, b1, b2):
                    raise ValueError("geofence polygon is self-intersecting")
        # simple polygon must still enclose area (signed shoelace)
        area = 0.0
        for i in range(n):
            (x1, y1), (x2, y2) = coords[i], coords[(i + 1) % n]
            area += x1 * y2 - x2 * y1
        if abs(area) / 2.0 <= 0.0:
            raise ValueError("geofence polygon has zero area")
        for i in range(n):
            a, b, c = coords[i], coords[(i + 1) % n], coords[(i + 2) % n]
            if _orient(*a, *b, *c) == 0.0:
                # collinear corner: reject only if it folds back over itself
                if (a[0] - b[0]) * (c[0] - b[0]) + (a[1] - b[1]) * (c[1] - b[1]) > 0:
                    raise ValueError("geofence polygon folds back on itself")
        object.__setattr__(self, "vertices", pts)

    def centroid(self) -> ImagePoint:
        us = [p.u for p in self.vertices]
        vs = [p.v for p in self.vertices]
        return ImagePoint(sum(us) / len(us), sum(vs) / len(vs))


def contains(fence: Geofence, p: ImagePoint) -> bool:
    """Even-odd containment; points exactly on an edge count as inside."""
    pts = fence.vertices
    n = len(pts)
    for i in range(n):
        a, b = pts[i], pts[(i + 1) % n]
        if _on_segment(p.u, p.v, a.u, a.v, b.u, b.v):
            return True
    inside = False
    for i in range(n):
        a, b = pts[i], pts[(i + 1) % n]
        if (a.v > p.v) != (b.v > p.v):
            x_cross = a.u + (p.v - a.v) * (b.u - a.u) / (b.v - a.v)
            if p.u < x_cross:
                inside = not inside
    return inside


def ray_exit_distance(fence: Geofence, origin: ImagePoint, angle: float, max_dist: float = 1e6) -> float:
    """Distance along a ray from ``origin`` until it first leaves the fence.

    Returns 0 when the origin is outside; ``max_dist`` when no boundary is
    crossed within that range.
    """
    if not contains(fence, origin):
        return 0.0
    du, dv = math.cos(angle), math.sin(angle)
    best = max_dist
    pts = fence.vertices
    n = len(pts)
    for i in range(n):
        a, b = pts[i], pts[(i + 1) % n]
        eu, ev = b.u - a.u, b.v - a.v
        denom = du * ev - dv * eu
        if abs(denom) < 1e-12:
            continue
        t = ((a.u - origin.u) * ev - (a.v - origin.v) * eu) / denom
        s = ((a.u - origin.u) * dv - (a.v - origin.v) * du) / denom
        if t > 1e-9 and -1e-9 <= s <= 1.0 + 1e-9:
            best = min(best, t)
    return best
