"""Flat JSON configuration: defaults, file loading, and object builders.

A config is a single flat dict.  Files override defaults key by key;
unknown keys are rejected to catch typos early.  Values that are geometry
(fence, track, spin locations) are pixel-coordinate lists exactly as an
operator would draw them.
"""

from __future__ import annotations

import json
from pathlib import Path

from .geometry import CameraModel, Geofence, ImagePoint, ImageTrack
from .world import DetectorNoise, Pose2D, RobotParams, World

DEFAULTS: dict = {
    "seed": 0,
    # camera (plane-to-plane homography built from an elevated tilted view)
    "image_width": 800,
    "image_height": 600,
    "camera_height_m": 2.3,
    "camera_tilt_deg": 15.0,
    "camera_focal_px": 820.0,
    "camera_pan_deg": 0.0,
    "camera_x_m": 0.0,
    "camera_y_m": 0.0,
    # robot + simulated detector
    "robot_radius_m": 0.14,
    "robot_v_max": 0.5,
    "robot_omega_max": 1.2,
    "detector_center_jitter_px": 2.0,
    "detector_size_jitter_px": 1.0,
    "detector_dropout": 0.02,
    # synthetic crop renderer
    "crop_size_px": 32,
    "crop_noise_level": 0.5,
    "crop_zoom": 1.45,
    # simulation clock
    "tick_dt": 0.05,
    "start_x_m": 0.0,
    "start_y_m": 0.8,
    "start_heading_rad": 0.0,
    # operator geometry (image pixels, as drawn)
    "fence_px": [[92, 137], [708, 137], [668, 554], [132, 554]],
    "track_px": [[206, 226], [594, 226], [578, 483], [222, 483]],
    "spin_locations_px": [[400, 360], [191, 261], [609, 261], [204, 453], [596, 453]],
    "spin_count": 3,
    # wander behaviour
    "wander_v_nom": 0.4,
    "wander_duration_s": 780.0,
    "wander_lookahead_px": 60.0,
    "wander_min_clearance_px": 150.0,
    "wander_miss_stop_s": 0.5,
    "wander_miss_lost_s": 5.0,
    # weak labels
    "label_dt_s": 0.25,
    "label_tau_px": 5.0,
    # dataset split
    "split_test_duration_s": 60.0,
    # augmentation
    "aug_brightness_delta": 0.15,
    "aug_contrast_lo": 0.7,
    "aug_contrast_hi": 1.3,
    "aug_blur_sigma_lo": 0.3,
    "aug_blur_sigma_hi": 1.0,
    "aug_noise_sigma": 0.03,
    "aug_prob": 0.5,
    # estimator
    "bins": 100,
    "hidden_units": 128,
    "pool_size": 8,
    "train_alpha": 1.0,
    "train_lr": 0.02,
    "train_optimizer": "sgd",
    "train_clip_norm": 5.0,
    "train_momentum": 0.9,
    "train_batch": 32,
    "train_epochs": 100,
    # controller
    "gain_kp_ct": 0.01,
    "gain_kd_ct": 0.02,
    "gain_kp_h": 1.5,
    "gain_kd_h": 0.1,
    "capture_radius_px": 15.0,
    "spin_exit_tol_rad": 0.15,
    "control_v_nom": 0.3,
    # autonomy runs
    "autonomy_n_runs": 8,
    "autonomy_timeout_s": 120.0,
    # service
    "service_port": 8710,
    "service_realtime": False,
}


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> dict:
    """Defaults merged with an optional JSON file and explicit overrides."""
    cfg = dict(DEFAULTS)
    if path is not None:
        with open(path) as f:
            user = json.load(f)
        unknown = set(user) - set(DEFAULTS)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(user)
    if overrides:
        unknown = set(overrides) - set(DEFAULTS)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(overrides)
    return cfg


def save_config(cfg: dict, path: str | Path) -> None:
    with open(path, "w") as f:
        json.dump(cfg, f, indent=2, sort_keys=True)
        f.write("\n")


def make_camera(cfg: dict) -> CameraModel:
    return CameraModel.tilted(
        height_m=cfg["camera_height_m"],
        tilt_deg=cfg["camera_tilt_deg"],
        focal_px=cfg["camera_focal_px"],
        width=cfg["image_width"],
        height=cfg["image_height"],
        pan_deg=cfg["camera_pan_deg"],
        cam_x=cfg["camera_x_m"],
        cam_y=cfg["camera_y_m"],
    )


def make_robot(cfg: dict) -> RobotParams:
    return RobotParams(
        radius_m=cfg["robot_radius_m"],
        v_max=cfg["robot_v_max"],
        omega_max=cfg["robot_omega_max"],
    )


def make_noise(cfg: dict, zero: bool = False) -> DetectorNoise:
    if zero:
        return DetectorNoise(0.0, 0.0, 0.0, seed=cfg["seed"])
    return DetectorNoise(
        center_sigma_px=cfg["detector_center_jitter_px"],
        size_sigma_px=cfg["detector_size_jitter_px"],
        dropout=cfg["detector_dropout"],
        seed=cfg["seed"],
    )


def make_world(cfg: dict, seed: int | None = None, zero_noise: bool = False) -> World:
    return World(
        cam=make_camera(cfg),
        robot=make_robot(cfg),
        noise=make_noise(cfg, zero=zero_noise),
        start=Pose2D(cfg["start_x_m"], cfg["start_y_m"], cfg["start_heading_rad"]),
        dt=cfg["tick_dt"],
        seed=cfg["seed"] if seed is None else seed,
        crop_size=cfg["crop_size_px"],
        crop_noise=0.0 if zero_noise else cfg["crop_noise_level"],
        crop_zoom=cfg["crop_zoom"],
    )


def make_fence(cfg: dict) -> Geofence:
    return Geofence([ImagePoint(u, v) for u, v in cfg["fence_px"]])


def make_track(cfg: dict) -> ImageTrack:
    return ImageTrack([ImagePoint(u, v) for u, v in cfg["track_px"]])


def spin_locations(cfg: dict) -> list[ImagePoint]:
    return [ImagePoint(u, v) for u, v in cfg["spin_locations_px"]]
