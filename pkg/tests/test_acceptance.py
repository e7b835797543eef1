"""End-to-end acceptance suite.

Each test prints one PASS/FAIL line (run with -s to watch them stream).
The expensive artifacts (the seeded 5000-label dataset and the two trained
heads) are built once per session and shared.
"""

import json
import math
import time

import numpy as np
import pytest
from click.testing import CliRunner

from deskservo import cli as climod
from deskservo.autonomy import run_autonomy
from deskservo.config import DEFAULTS, make_camera, make_fence, make_world
from deskservo.data import (
    label_orientations,
    run_geofenced_wander,
    run_spin_collection,
    interpolate_boxes,
    scarce_subset,
    split,
)
from deskservo.errors import DegenerateExpectation
from deskservo.estimator import (
    TrainConfig,
    backward,
    circular_expectation,
    evaluate,
    flatten_grads,
    flatten_params,
    forward,
    init_params,
    init_regression_params,
    loss_continuous,
    loss_total,
    set_flat_params,
    softmax,
    train,
)
from deskservo.config import spin_locations
from deskservo.estimator import BinLayout, RegressionParams, _as_batch, _features
from deskservo.geometry import (
    CameraModel,
    Geofence,
    GroundPoint,
    ImagePoint,
    TWO_PI,
    ang_diff,
    contains,
    cross_track,
    wrap_angle,
)
from deskservo.world import footprint_box, in_image_heading, iou

BINS = BinLayout(100)


def _report(num, ok, detail):
    print(f"\nACCEPTANCE {num}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, detail


@pytest.fixture(scope="session")
def dataset_5000():
    cfg = dict(DEFAULTS)
    world = make_world(cfg)
    frames = run_geofenced_wander(
        world,
        make_camera(cfg),
        make_fence(cfg),
        cfg["wander_duration_s"],
        world.rng_behavior,
        v_nom=cfg["wander_v_nom"],
        lookahead_px=cfg["wander_lookahead_px"],
        min_clearance_px=cfg["wander_min_clearance_px"],
    )
    labels = label_orientations(frames, cfg["label_dt_s"], cfg["label_tau_px"])[:5000]
    assert len(labels) == 5000
    return split(labels, cfg["split_test_duration_s"])


@pytest.fixture(scope="session")
def trained_full(dataset_5000):
    """Both heads trained on the full dataset; timing kept for criterion 3."""
    tc = TrainConfig()
    t0 = time.monotonic()
    cls_params, _ = train(dataset_5000, tc, arch="classification")
    reg_params, _ = train(dataset_5000, tc, arch="regression")
    elapsed = time.monotonic() - t0
    test = dataset_5000.test_entries()
    return {
        "cls": cls_params,
        "reg": reg_params,
        "cls_median": evaluate(cls_params, test)["median_deg"],
        "reg_median": evaluate(reg_params, test)["median_deg"],
        "train_s": elapsed,
    }


def _loss_at(params, crop, phi, alpha):
    if isinstance(params, RegressionParams):
        from deskservo.estimator import forward_regression

        return loss_continuous(phi, forward_regression(params, crop))
    x = _as_batch(params, crop)
    _, f = _features(params, x)
    logits = (f @ params.w2 + params.b2)[0]
    return loss_total(phi, softmax(logits), params.bins, alpha)


class TestCriterion1Gradients:
    def test_analytic_matches_finite_differences(self):
        start = time.monotonic()
        cfg = TrainConfig()
        rng = np.random.default_rng(20240817)
        h = 1e-6
        worst = 0.0
        for case in range(20):
            reg = case % 4 == 3
            params = init_regression_params(cfg, rng) if reg else init_params(cfg, rng)
            vec = flatten_params(params) + 0.05 * rng.normal(size=flatten_params(params).size)
            set_flat_params(params, vec)
            crop = rng.uniform(0, 1, (32, 32))
            phi = rng.uniform(0, TWO_PI)
            _, grads = backward(params, crop, phi, alpha=1.0)
            g = flatten_grads(grads)

            def fd_along(d):
                set_flat_params(params, vec + h * d)
                lp = _loss_at(params, crop, phi, 1.0)
                set_flat_params(params, vec - h * d)
                lm = _loss_at(params, crop, phi, 1.0)
                set_flat_params(params, vec)
                return (lp - lm) / (2 * h)

            # full-gradient agreement along random directions
            for _ in range(3):
                d = rng.normal(size=vec.size)
                d /= np.linalg.norm(d)
                fd, an = fd_along(d), float(g @ d)
                worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-12))
            # per-coordinate agreement where the central difference is
            # resolvable above f64 roundoff at this h
            floor = max(1e-3, 1e-4 * float(np.max(np.abs(g))))
            coords = np.where(np.abs(g) >= floor)[0]
            for c in rng.choice(coords, size=min(15, coords.size), replace=False):
                e = np.zeros(vec.size)
                e[c] = 1.0
                fd, an = fd_along(e), g[c]
                worst = max(worst, abs(fd - an) / max(abs(fd), abs(an)))
        elapsed = time.monotonic() - start
        ok = worst < 1e-5 and elapsed < 10.0
        _report(1, ok, f"gradient check worst rel err {worst:.2e} (<1e-5), {elapsed:.1f}s (<10s)")


class TestCriterion2CircularHead:
    def test_circular_head_properties(self):
        ok, notes = True, []
        for i in (0, 7, 42, 99):
            p = np.zeros(100)
            p[i] = 1.0
            ok &= abs(ang_diff(circular_expectation(p, BINS), BINS.centers[i])) <= 1e-9
        notes.append("one-hot exact")
        rng = np.random.default_rng(12)
        for _ in range(100):
            p = rng.dirichlet(np.ones(100) * 0.25)
            try:
                base = circular_expectation(p, BINS)
            except DegenerateExpectation:
                continue
            k = int(rng.integers(1, 100))
            got = circular_expectation(np.roll(p, k), BINS)
            ok &= abs(ang_diff(got, wrap_angle(base + k * BINS.delta))) <= 1e-9
        notes.append("cyclic-shift equivariance")
        try:
            circular_expectation(np.full(100, 0.01), BINS)
            ok = False
        except DegenerateExpectation:
            notes.append("uniform degenerate")
        wrap = loss_continuous(0.05, TWO_PI - 0.05)
        ok &= abs(wrap - 0.01) < 1e-15
        notes.append(f"wrap loss {wrap!r}")
        logits = rng.normal(size=100)
        for c in (1.0, -5.0, 20.0):
            ok &= float(np.max(np.abs(softmax(logits + c) - softmax(logits)))) <= 1e-12
        notes.append("logit shift invariance")
        _report(2, ok, "; ".join(notes))


class TestCriterion3FullDataOrdering:
    def test_classification_beats_regression(self, trained_full):
        cls_m, reg_m = trained_full["cls_median"], trained_full["reg_median"]
        ok = cls_m <= 10.0 and cls_m < reg_m and trained_full["train_s"] < 300.0
        _report(
            3,
            ok,
            f"full data medians: classification {cls_m:.2f} deg (<=10) vs regression "
            f"{reg_m:.2f} deg, trained both in {trained_full['train_s']:.0f}s (<300s)",
        )


class TestCriterion4ScarceDataOrdering:
    def test_scarce_degrades_but_ordering_holds(self, dataset_5000, trained_full):
        scarce = scarce_subset(dataset_5000, 0.1)
        tc = TrainConfig()
        test = dataset_5000.test_entries()
        cls_s = evaluate(train(scarce, tc, arch="classification")[0], test)["median_deg"]
        reg_s = evaluate(train(scarce, tc, arch="regression")[0], test)["median_deg"]
        ok = (
            cls_s > trained_full["cls_median"]
            and reg_s > trained_full["reg_median"]
            and cls_s < reg_s
        )
        _report(
            4,
            ok,
            f"scarce medians: classification {cls_s:.2f} vs regression {reg_s:.2f} deg "
            f"(full: {trained_full['cls_median']:.2f} / {trained_full['reg_median']:.2f})",
        )


class TestCriterion5WeakLabelFidelity:
    def test_labels_match_true_heading(self):
        cfg = dict(DEFAULTS)
        cam = make_camera(cfg)
        fence = make_fence(cfg)

        world = make_world(cfg, zero_noise=True)
        frames = run_geofenced_wander(
            world, cam, fence, 60.0, world.rng_behavior,
            v_nom=cfg["wander_v_nom"], lookahead_px=cfg["wander_lookahead_px"],
            min_clearance_px=cfg["wander_min_clearance_px"],
        )
        labels = label_orientations(frames, cfg["label_dt_s"], cfg["label_tau_px"])
        errs = np.degrees(
            [abs(ang_diff(lb.phi, in_image_heading(cam, world.log.sample(lb.t)))) for lb in labels]
        )
        frac2 = float(np.mean(errs <= 2.0))

        world_n = make_world(cfg)
        frames_n = run_geofenced_wander(
            world_n, cam, fence, 60.0, world_n.rng_behavior,
            v_nom=cfg["wander_v_nom"], lookahead_px=cfg["wander_lookahead_px"],
            min_clearance_px=cfg["wander_min_clearance_px"],
        )
        labels_n = label_orientations(frames_n, cfg["label_dt_s"], cfg["label_tau_px"])
        med_n = float(
            np.median(
                np.degrees(
                    [abs(ang_diff(lb.phi, in_image_heading(cam, world_n.log.sample(lb.t)))) for lb in labels_n]
                )
            )
        )
        ok = len(labels) > 100 and frac2 >= 0.99 and med_n <= 5.0
        _report(
            5,
            ok,
            f"noiseless: {frac2 * 100:.1f}% of {len(labels)} labels within 2 deg (>=99%); "
            f"default noise: median {med_n:.2f} deg (<=5)",
        )


class TestCriterion6SpinInterpolation:
    def test_interpolated_boxes_match_ground_truth(self):
        cfg = dict(DEFAULTS)
        cam = make_camera(cfg)
        world = make_world(cfg, zero_noise=True)
        sessions = run_spin_collection(world, cam, spin_locations(cfg), spin_count=cfg["spin_count"])
        per_location = []
        for s in sessions:
            vals = [
                iou(interp, footprint_box(cam, world.log.sample(t), world.robot))
                for t, interp in interpolate_boxes(s)
            ]
            per_location.append(float(np.mean(vals)))
        annots = [s.annotation_count() for s in sessions]
        ok = (
            len(sessions) == 5
            and all(m >= 0.8 for m in per_location)
            and annots == [2] * 5
        )
        _report(
            6,
            ok,
            f"mean IoU per location {[f'{m:.3f}' for m in per_location]} (>=0.8), "
            f"annotations per location {annots} (=2)",
        )


class TestCriterion7ClosedLoopAutonomy:
    def test_ground_truth_pose_mode(self):
        cfg = dict(DEFAULTS)
        start = time.monotonic()
        records = run_autonomy(cfg, n_runs=8, gt_pose=True)
        elapsed = time.monotonic() - start
        maxes = [r.metrics["cross_track_max_m"] for r in records]
        ok = all(r.completed for r in records) and max(maxes) <= 0.05 and elapsed < 180.0
        _report(
            7,
            ok,
            f"gt-pose: 8 runs, per-run max cross-track {max(maxes) * 100:.2f} cm (<=5), "
            f"{elapsed:.0f}s (<180s)",
        )

    def test_learned_estimator_mode(self, trained_full):
        cfg = dict(DEFAULTS)
        start = time.monotonic()
        records = run_autonomy(cfg, params=trained_full["cls"], n_runs=8, gt_pose=False)
        elapsed = time.monotonic() - start
        maxes = [r.metrics["cross_track_max_m"] for r in records]
        ok = all(r.completed for r in records) and max(maxes) <= 0.15 and elapsed < 180.0
        _report(
            7,
            ok,
            f"learned estimator: 8 runs, worst max cross-track {max(maxes) * 100:.2f} cm (<=15), "
            f"{elapsed:.0f}s (<180s)",
        )


class TestCriterion8GeometrySuite:
    def test_geometry_bundle(self):
        cam = CameraModel.tilted(height_m=2.3, tilt_deg=15.0, focal_px=820.0, width=800, height=600)
        rng = np.random.default_rng(88)
        ok = True
        for _ in range(300):
            a = np.array([rng.uniform(-1, 1), rng.uniform(0, 1.5)])
            d = rng.normal(size=2)
            d /= np.linalg.norm(d)
            ps = [cam.project(GroundPoint(*(a + t * d))) for t in (0.0, 0.4, 0.9)]
            u1 = np.array([ps[1].u - ps[0].u, ps[1].v - ps[0].v])
            u2 = np.array([ps[2].u - ps[0].u, ps[2].v - ps[0].v])
            u1 /= np.linalg.norm(u1)
            u2 /= np.linalg.norm(u2)
            ok &= abs(u1[0] * u2[1] - u1[1] * u2[0]) < 1e-9
        for _ in range(1000):
            g = GroundPoint(rng.uniform(-1, 1), rng.uniform(0, 1.5))
            g2 = cam.unproject(cam.project(g))
            ok &= math.hypot(g2.x - g.x, g2.y - g.y) < 1e-9
        for _ in range(25):
            a = ImagePoint(*rng.uniform(-50, 50, 2))
            dd = rng.normal(size=2)
            dd /= np.linalg.norm(dd)
            b = ImagePoint(a.u + 40 * dd[0], a.v + 40 * dd[1])
            p = ImagePoint(*rng.uniform(-80, 80, 2))
            dense = _dense_line_distance(p, a, b)
            ok &= abs(abs(cross_track(p, (a, b))) - dense) < 1e-6
        square = Geofence([ImagePoint(0, 0), ImagePoint(10, 0), ImagePoint(10, 10), ImagePoint(0, 10)])
        ok &= contains(square, ImagePoint(10, 5))
        ok &= contains(square, ImagePoint(5, 5))
        ok &= not contains(square, ImagePoint(15, 5))
        _report(8, ok, "collinearity 1e-9, round trip 1e-9, cross-track vs dense oracle 1e-6, boundary rule")


def _dense_line_distance(p, a, b):
    du, dv = b.u - a.u, b.v - a.v
    L = math.hypot(du, dv)
    ts = np.linspace(-200.0, 200.0, 400001)
    px, py = a.u + ts * du / L, a.v + ts * dv / L
    t0 = ts[int(np.argmin((px - p.u) ** 2 + (py - p.v) ** 2))]
    ts = np.linspace(t0 - 0.01, t0 + 0.01, 200001)
    px, py = a.u + ts * du / L, a.v + ts * dv / L
    return float(np.sqrt(((px - p.u) ** 2 + (py - p.v) ** 2).min()))


class TestCriterion9Determinism:
    def test_cli_reruns_are_byte_identical(self, tmp_path):
        runner = CliRunner()
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(
            json.dumps(
                {
                    "wander_duration_s": 20.0,
                    "split_test_duration_s": 5.0,
                    "train_epochs": 2,
                    "autonomy_n_runs": 2,
                }
            )
        )
        digests = []
        for name in ("a", "b"):
            out = tmp_path / name
            base = ["--config", str(cfg_path), "--seed", "3", "--out", str(out)]
            for args in (
                ["collect-spins"],
                ["wander"],
                ["label"],
                ["split"],
                ["train"],
                ["autonomy", "--gt-pose"],
            ):
                result = runner.invoke(climod.main, base + args, catch_exceptions=False)
                assert result.exit_code == 0, result.output
            digests.append(
                {
                    f.name: f.read_bytes()
                    for f in sorted(out.rglob("*"))
                    if f.is_file()
                }
            )
        same = set(digests[0]) == set(digests[1]) and all(
            digests[0][k] == digests[1][k] for k in digests[0]
        )
        _report(
            9,
            same,
            f"{len(digests[0])} artifacts (dataset, checkpoint, run records) byte-identical across reruns",
        )
