import json
import time

import pytest
from fastapi.testclient import TestClient

from deskservo.config import make_camera, make_fence, make_world
from deskservo.data import label_orientations, run_geofenced_wander, save_labels, save_wander_log
from deskservo.service import create_app

FENCE = [[92, 137], [708, 137], [668, 554], [132, 554]]
TRACK = [[206, 226], [594, 226], [578, 483], [222, 483]]
BOWTIE = [[0, 0], [100, 100], [100, 0], [0, 100]]


def _wait_idle(client, timeout_s=60.0):
    deadline = time.monotonic() + timeout_s
    while time.monotonic() < deadline:
        state = client.get("/api/v1/state").json()
        if state["mode"] == "IDLE":
            return state
        time.sleep(0.05)
    raise AssertionError("service did not return to IDLE in time")


@pytest.fixture()
def client(tmp_path, default_cfg):
    app = create_app(dict(default_cfg), tmp_path / "svc")
    with TestClient(app) as c:
        c.out_dir = tmp_path / "svc"
        yield c


class TestStateAndGeometry:
    def test_initial_state(self, client):
        state = client.get("/api/v1/state").json()
        assert state["mode"] == "IDLE"
        assert state["fence"] is None and state["track"] is None
        assert "pose" in state

    def test_frame_is_png(self, client):
        r = client.get("/api/v1/frame")
        assert r.status_code == 200
        assert r.content[:8] == b"\x89PNG\r\n\x1a\n"

    def test_geofence_echo(self, client):
        r = client.post("/api/v1/geofence", json={"points": FENCE})
        assert r.status_code == 200
        assert r.json()["points"] == [[float(u), float(v)] for u, v in FENCE]
        assert client.get("/api/v1/state").json()["fence"] == r.json()["points"]

    def test_self_intersecting_geofence_rejected(self, client):
        r = client.post("/api/v1/geofence", json={"points": BOWTIE})
        assert r.status_code == 400
        assert "error" in r.json()

    def test_track_echo_and_validation(self, client):
        r = client.post("/api/v1/track", json={"points": TRACK})
        assert r.status_code == 200
        assert client.get("/api/v1/state").json()["track"] == r.json()["points"]
        r = client.post("/api/v1/track", json={"points": [[1, 1]]})
        assert r.status_code == 400


class TestModes:
    def test_wander_requires_fence(self, client):
        r = client.post("/api/v1/mode", json={"mode": "WANDER"})
        assert r.status_code == 409

    def test_autonomy_requires_track(self, client):
        r = client.post("/api/v1/mode", json={"mode": "AUTONOMY", "gt_pose": True})
        assert r.status_code == 409

    def test_unknown_mode_rejected(self, client):
        r = client.post("/api/v1/mode", json={"mode": "FLY"})
        assert r.status_code == 400

    def test_unknown_run_404(self, client):
        assert client.get("/api/v1/runs/7").status_code == 404

    def test_wander_runs_and_writes_artifacts(self, client):
        client.post("/api/v1/geofence", json={"points": FENCE})
        r = client.post("/api/v1/mode", json={"mode": "WANDER", "duration_s": 8.0})
        assert r.status_code == 200
        _wait_idle(client)
        assert (client.out_dir / "wander_log.jsonl").exists()
        assert (client.out_dir / "labels.jsonl").exists()

    def test_mode_conflict_during_activity(self, client):
        client.post("/api/v1/geofence", json={"points": FENCE})
        r = client.post("/api/v1/mode", json={"mode": "WANDER", "duration_s": 20.0})
        assert r.status_code == 200
        r = client.post("/api/v1/mode", json={"mode": "WANDER", "duration_s": 5.0})
        assert r.status_code == 409
        r = client.post("/api/v1/geofence", json={"points": FENCE})
        assert r.status_code == 409  # no geometry edits mid-activity
        _wait_idle(client)

    def test_collect_spins_calibrates(self, tmp_path, default_cfg):
        cfg = dict(default_cfg)
        cfg["spin_locations_px"] = cfg["spin_locations_px"][:2]
        app = create_app(cfg, tmp_path / "svc")
        with TestClient(app) as client:
            r = client.post("/api/v1/mode", json={"mode": "COLLECT_SPINS"})
            assert r.status_code == 200
            deadline = time.monotonic() + 120.0
            while time.monotonic() < deadline:
                state = client.get("/api/v1/state").json()
                if state["mode"] == "IDLE" and state["calibration_rad_s"] is not None:
                    break
                time.sleep(0.05)
            assert state["calibration_rad_s"] == pytest.approx(1.2, rel=0.02)
        calib = json.loads((tmp_path / "svc" / "calibration.json").read_text())
        assert calib["omega_rad_s"] == state["calibration_rad_s"]
        assert (tmp_path / "svc" / "spin_sessions.jsonl").exists()

    def test_autonomy_gt_pose_and_run_records(self, client):
        client.post("/api/v1/track", json={"points": TRACK})
        r = client.post("/api/v1/mode", json={"mode": "AUTONOMY", "gt_pose": True, "n_runs": 2})
        assert r.status_code == 200
        _wait_idle(client, timeout_s=120.0)
        runs = client.get("/api/v1/runs").json()["runs"]
        assert len(runs) == 2
        rec = client.get("/api/v1/runs/0").json()
        assert rec["completed"]
        assert rec["metrics"]["cross_track_max_m"] <= 0.05
        assert len(rec["ticks"]) == rec["metrics"]["n_ticks"]
        assert (client.out_dir / "runs" / "manifest.json").exists()


class TestTelemetry:
    def test_stream_delivers_snapshots(self, client):
        client.post("/api/v1/geofence", json={"points": FENCE})
        client.post("/api/v1/mode", json={"mode": "WANDER", "duration_s": 10.0})
        with client.websocket_connect("/api/v1/telemetry") as ws:
            seen = [json.loads(ws.receive_text()) for _ in range(3)]
        ticks = [s["tick"] for s in seen]
        assert ticks == sorted(ticks)
        assert all("pose" in s and "mode" in s for s in seen)
        _wait_idle(client)


class TestApiCliEquivalence:
    def test_wander_via_api_matches_library_run(self, tmp_path, default_cfg):
        cfg = dict(default_cfg)
        duration = 12.0
        # library path, exactly as the CLI wander + label commands run it
        world = make_world(cfg)
        frames = run_geofenced_wander(
            world,
            make_camera(cfg),
            make_fence(cfg),
            duration,
            world.rng_behavior,
            v_nom=cfg["wander_v_nom"],
            omega_cal=None,
            lookahead_px=cfg["wander_lookahead_px"],
            min_clearance_px=cfg["wander_min_clearance_px"],
            miss_stop_s=cfg["wander_miss_stop_s"],
            miss_lost_s=cfg["wander_miss_lost_s"],
        )
        ref_log = tmp_path / "ref_log.jsonl"
        ref_labels = tmp_path / "ref_labels.jsonl"
        save_wander_log(ref_log, frames, cfg["crop_size_px"])
        save_labels(
            ref_labels,
            label_orientations(frames, cfg["label_dt_s"], cfg["label_tau_px"]),
            cfg["crop_size_px"],
        )

        app = create_app(cfg, tmp_path / "svc")
        with TestClient(app) as client:
            client.post("/api/v1/geofence", json={"points": FENCE})
            client.post("/api/v1/mode", json={"mode": "WANDER", "duration_s": duration})
            _wait_idle(client)
        assert (tmp_path / "svc" / "wander_log.jsonl").read_bytes() == ref_log.read_bytes()
        assert (tmp_path / "svc" / "labels.jsonl").read_bytes() == ref_labels.read_bytes()
