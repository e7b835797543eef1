"""Image-space autonomy controller.

A PD law follows straight image segments using signed cross-track and
wrap-aware heading errors, spins on the spot between segments, and
switches modes from the in-image pose alone: no ground-plane quantity
enters the control path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

from .errors import InvalidState, TooFewCorners
from .geometry import ImagePoint, ImageTrack, ang_diff, cross_track
from .world import BoundingBox

FOLLOW = "FOLLOW"
SPIN = "SPIN"
DONE = "DONE"


@dataclass(frozen=True)
class ImagePose:
    """Robot pose in the image plane: box center plus estimated heading."""

    position: ImagePoint
    heading: float


@dataclass(frozen=True)
class ControllerGains:
    """PD gains (per pixel / per radian) and command shaping limits."""

    kp_ct: float = 0.01
    kd_ct: float = 0.02
    kp_h: float = 1.5
    kd_h: float = 0.1
    v_nom: float = 0.3
    capture_radius_px: float = 15.0
    spin_exit_tol_rad: float = 0.15
    v_max: float = 0.5
    omega_max: float = 1.2

    def __post_init__(self):
        if min(self.kp_ct, self.kd_ct, self.kp_h, self.kd_h) < 0:
            raise ValueError("gains must be >= 0")
        if self.v_nom <= 0 or self.capture_radius_px <= 0:
            raise ValueError("v_nom and capture radius must be positive")


@dataclass(frozen=True)
class ControllerState:
    """Progress along the track plus memory for the derivative terms."""

    segment: int = 0
    mode: str = FOLLOW
    prev_e_ct: Optional[float] = None
    prev_e_h: Optional[float] = None

    def reset_derivatives(self) -> "ControllerState":
        return replace(self, prev_e_ct=None, prev_e_h=None)


def control_step(
    pose: ImagePose,
    track: ImageTrack,
    state: ControllerState,
    gains: ControllerGains,
    dt: float,
) -> tuple[float, float, ControllerState]:
    """One controller tick: (v, omega, next state).

    FOLLOW steers with the PD law and scales forward speed by
    max(0, cos(heading error)) so the robot never drives away from the
    line; SPIN rotates in place until the heading error to the next
    segment drops below tolerance; DONE holds (0, 0) forever.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if state.mode == DONE:
        return 0.0, 0.0, state
    if not 0 <= state.segment < track.n_segments:
        raise InvalidState(f"segment {state.segment} outside track with {track.n_segments} segments")

    seg = track.segment(state.segment)
    seg_dir = track.direction_angle(state.segment)
    e_h = ang_diff(seg_dir, pose.heading)

    if state.mode == SPIN:
        if abs(e_h) <= gains.spin_exit_tol_rad:
            state = replace(state, mode=FOLLOW).reset_derivatives()
        else:
            omega = max(-gains.omega_max, min(gains.omega_max, gains.kp_h * e_h))
            return 0.0, omega, state

    # FOLLOW
    end = seg[1]
    dist_to_end = math.hypot(pose.position.u - end.u, pose.position.v - end.v)
    if dist_to_end <= gains.capture_radius_px:
        if state.segment + 1 >= track.n_segments:
            return 0.0, 0.0, replace(state, mode=DONE)
        nxt = replace(state, segment=state.segment + 1).reset_derivatives()
        e_h_next = ang_diff(track.direction_angle(nxt.segment), pose.heading)
        if abs(e_h_next) > gains.spin_exit_tol_rad:
            omega = max(-gains.omega_max, min(gains.omega_max, gains.kp_h * e_h_next))
            return 0.0, omega, replace(nxt, mode=SPIN)
        return _follow_command(pose, track, replace(nxt, mode=FOLLOW), gains, dt)

    return _follow_command(pose, track, state, gains, dt)


def _follow_command(pose, track, state, gains, dt):
    seg = track.segment(state.segment)
    seg_dir = track.direction_angle(state.segment)
    e_ct = cross_track(pose.position, seg)
    e_h = ang_diff(seg_dir, pose.heading)
    de_ct = 0.0 if state.prev_e_ct is None else (e_ct - state.prev_e_ct) / dt
    de_h = 0.0 if state.prev_e_h is None else ang_diff(e_h, state.prev_e_h) / dt
    omega = gains.kp_ct * e_ct + gains.kd_ct * de_ct + gains.kp_h * e_h + gains.kd_h * de_h
    omega = max(-gains.omega_max, min(gains.omega_max, omega))
    v = gains.v_nom * max(0.0, math.cos(e_h))
    v = max(-gains.v_max, min(gains.v_max, v))
    return v, omega, replace(state, prev_e_ct=e_ct, prev_e_h=e_h)


def make_track_from_corners(corner_boxes: Sequence[BoundingBox]) -> ImageTrack:
    """Track through the detector boxes marking the taped ground corners."""
    if len(corner_boxes) < 2:
        raise TooFewCorners(f"need >= 2 corner boxes, got {len(corner_boxes)}")
    return ImageTrack([b.center for b in corner_boxes])
