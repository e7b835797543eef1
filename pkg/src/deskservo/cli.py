"""Command-line entry points for the collection / training / autonomy loop.

Every subcommand is deterministic for a fixed config and seed: rerunning
one writes byte-identical artifacts.
"""

from __future__ import annotations

import json
from pathlib import Path

import click

from . import autonomy as autom
from . import config as cfgmod
from . import data as datamod
from . import estimator as estmod
from .errors import DeskServoError


def _cfg(ctx) -> dict:
    return ctx.obj["cfg"]


def _out(ctx) -> Path:
    out = Path(ctx.obj["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None, help="JSON config file overriding defaults.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out", type=click.Path(file_okay=False), default="deskservo_out", help="Output directory.")
@click.pass_context
def main(ctx, config_path, seed, out):
    """Desk-scale visual servoing stack: data collection, training, autonomy."""
    try:
        overrides = {"seed": seed} if seed is not None else None
        cfg = cfgmod.load_config(config_path, overrides)
    except (ValueError, OSError, json.JSONDecodeError) as e:
        raise click.ClickException(str(e))
    ctx.ensure_object(dict)
    ctx.obj["cfg"] = cfg
    ctx.obj["out"] = out


@main.command("collect-spins")
@click.option("--manual-boxes", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON file of manual endpoint boxes per location index: {\"0\": [[cu,cv,w,h],[cu,cv,w,h]], ...}")
@click.pass_context
def collect_spins(ctx, manual_boxes):
    """Run the spin-on-the-spot sessions and calibrate the rotation rate."""
    cfg, out = _cfg(ctx), _out(ctx)
    world = cfgmod.make_world(cfg, zero_noise=True)
    cam = cfgmod.make_camera(cfg)
    manual = None
    if manual_boxes:
        from .geometry import ImagePoint
        from .world import BoundingBox

        with open(manual_boxes) as f:
            raw = json.load(f)
        manual = {
            int(k): tuple(
                BoundingBox(center=ImagePoint(b[0], b[1]), width=b[2], height=b[3]) for b in v
            )
            for k, v in raw.items()
        }
    try:
        sessions = datamod.run_spin_collection(
            world, cam, cfgmod.spin_locations(cfg), spin_count=cfg["spin_count"], manual_annotations=manual
        )
        omega = datamod.calibrate_rotation(sessions)
    except DeskServoError as e:
        raise click.ClickException(str(e))
    datamod.save_sessions(out / "spin_sessions.jsonl", sessions)
    with open(out / "calibration.json", "w") as f:
        json.dump({"omega_rad_s": omega}, f, sort_keys=True)
        f.write("\n")
    click.echo(f"collected {len(sessions)} spin sessions; open-loop rate {omega:.4f} rad/s")


@main.command()
@click.option("--duration", type=float, default=None, help="Wander duration in simulated seconds.")
@click.pass_context
def wander(ctx, duration):
    """Geofenced wandering; writes the raw frame log."""
    cfg, out = _cfg(ctx), _out(ctx)
    world = cfgmod.make_world(cfg)
    cam = cfgmod.make_camera(cfg)
    fence = cfgmod.make_fence(cfg)
    omega_cal = None
    calib_file = out / "calibration.json"
    if calib_file.exists():
        with open(calib_file) as f:
            omega_cal = json.load(f)["omega_rad_s"]
    try:
        frames = datamod.run_geofenced_wander(
            world,
            cam,
            fence,
            duration if duration is not None else cfg["wander_duration_s"],
            world.rng_behavior,
            v_nom=cfg["wander_v_nom"],
            omega_cal=omega_cal,
            lookahead_px=cfg["wander_lookahead_px"],
            min_clearance_px=cfg["wander_min_clearance_px"],
            miss_stop_s=cfg["wander_miss_stop_s"],
            miss_lost_s=cfg["wander_miss_lost_s"],
        )
    except DeskServoError as e:
        raise click.ClickException(str(e))
    datamod.save_wander_log(out / "wander_log.jsonl", frames, cfg["crop_size_px"])
    click.echo(f"wandered {frames[-1].t - frames[0].t if frames else 0:.1f}s, {len(frames)} frames")


@main.command()
@click.pass_context
def label(ctx):
    """Turn the wander log into orientation labels."""
    cfg, out = _cfg(ctx), _out(ctx)
    frames = datamod.load_wander_log(out / "wander_log.jsonl")
    labels = datamod.label_orientations(frames, cfg["label_dt_s"], cfg["label_tau_px"])
    datamod.save_labels(out / "labels.jsonl", labels, cfg["crop_size_px"])
    click.echo(f"emitted {len(labels)} labels from {len(frames)} frames")


@main.command("split")
@click.pass_context
def split_cmd(ctx):
    """Chronological train/val/test split of the labels."""
    cfg, out = _cfg(ctx), _out(ctx)
    labels = datamod.load_labels(out / "labels.jsonl")
    try:
        ds = datamod.split(labels, cfg["split_test_duration_s"])
    except DeskServoError as e:
        raise click.ClickException(str(e))
    datamod.save_dataset(out / "dataset.jsonl", ds, cfg["crop_size_px"])
    click.echo(
        f"split {len(ds.entries)} labels: {len(ds.train_entries())} train, "
        f"{len(ds.val_entries())} val, {len(ds.test_entries())} test"
    )


def _train_config(cfg: dict) -> estmod.TrainConfig:
    return estmod.TrainConfig(
        alpha=cfg["train_alpha"],
        lr=cfg["train_lr"],
        momentum=cfg["train_momentum"],
        batch_size=cfg["train_batch"],
        epochs=cfg["train_epochs"],
        seed=cfg["seed"],
        augmentation=datamod.AugmentationParams(
            brightness_delta=(-cfg["aug_brightness_delta"], cfg["aug_brightness_delta"]),
            contrast=(cfg["aug_contrast_lo"], cfg["aug_contrast_hi"]),
            blur_sigma=(cfg["aug_blur_sigma_lo"], cfg["aug_blur_sigma_hi"]),
            noise_sigma=cfg["aug_noise_sigma"],
            prob=cfg["aug_prob"],
        ),
        hidden=cfg["hidden_units"],
        pool_size=cfg["pool_size"],
        bins_k=cfg["bins"],
        crop_size=cfg["crop_size_px"],
        optimizer=cfg["train_optimizer"],
        clip_norm=cfg["train_clip_norm"],
    )


@main.command()
@click.option("--arch", type=click.Choice(["classification", "regression"]), default="classification")
@click.pass_context
def train(ctx, arch):
    """Train the orientation estimator on the split dataset."""
    cfg, out = _cfg(ctx), _out(ctx)
    ds = datamod.load_dataset(out / "dataset.jsonl")
    try:
        params, history = estmod.train(ds, _train_config(cfg), arch=arch)
    except DeskServoError as e:
        raise click.ClickException(str(e))
    path = out / f"model_{arch}.json"
    estmod.save_checkpoint(path, params)
    best = min((h.get("val_median_deg", float("inf")) for h in history), default=float("nan"))
    click.echo(f"trained {arch}: best val median {best:.2f} deg -> {path}")


@main.command()
@click.option("--arch", type=click.Choice(["classification", "regression"]), default="classification")
@click.pass_context
def evaluate(ctx, arch):
    """Median / decile test error of a trained model."""
    cfg, out = _cfg(ctx), _out(ctx)
    ds = datamod.load_dataset(out / "dataset.jsonl")
    try:
        params = estmod.load_checkpoint(out / f"model_{arch}.json")
        metrics = estmod.evaluate(params, ds.test_entries())
    except DeskServoError as e:
        raise click.ClickException(str(e))
    with open(out / f"eval_{arch}.json", "w") as f:
        json.dump(metrics, f, sort_keys=True, indent=2)
        f.write("\n")
    click.echo(f"{arch}: test median {metrics['median_deg']:.2f} deg over {metrics['n']} samples")


@main.command()
@click.pass_context
def ablate(ctx):
    """Architecture/data-regime grid: both heads, full and scarce data."""
    cfg, out = _cfg(ctx), _out(ctx)
    ds = datamod.load_dataset(out / "dataset.jsonl")
    tc = _train_config(cfg)
    grid = {}
    for regime, d in (("full", ds), ("scarce_10pct", datamod.scarce_subset(ds))):
        for arch in ("classification", "regression"):
            params, _ = estmod.train(d, tc, arch=arch)
            m = estmod.evaluate(params, ds.test_entries())
            grid[f"{regime}/{arch}"] = m["median_deg"]
            click.echo(f"{regime:13s} {arch:14s} median {m['median_deg']:7.2f} deg")
    with open(out / "ablation.json", "w") as f:
        json.dump(grid, f, sort_keys=True, indent=2)
        f.write("\n")


@main.command()
@click.option("--gt-pose", is_flag=True, help="Bypass the estimator with ground-truth image pose.")
@click.option("--n-runs", type=int, default=None)
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), default=None)
@click.pass_context
def autonomy(ctx, gt_pose, n_runs, checkpoint):
    """Repeated closed-loop runs along the configured track."""
    cfg, out = _cfg(ctx), _out(ctx)
    params = None
    if not gt_pose:
        params = checkpoint or (out / "model_classification.json")
    try:
        records = autom.run_autonomy(cfg, params=params, n_runs=n_runs, gt_pose=gt_pose)
    except DeskServoError as e:
        raise click.ClickException(str(e))
    run_dir = out / ("runs_gt" if gt_pose else "runs")
    autom.save_runs(run_dir, records)
    worst = max(r.metrics["cross_track_max_m"] for r in records)
    click.echo(f"{len(records)} runs -> {run_dir}; worst max cross-track {worst * 100:.1f} cm")


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=None)
@click.option("--ui", "ui_dir", type=click.Path(file_okay=False), default=None,
              help="Directory with the built operator console (default: ./frontend if present).")
@click.pass_context
def serve(ctx, host, port, ui_dir):
    """Start the HTTP/WebSocket operator service."""
    cfg, out = _cfg(ctx), _out(ctx)
    from .service import serve as run_service

    run_service(cfg, out, host=host, port=port, ui_dir=ui_dir)


@main.command()
@click.pass_context
def report(ctx):
    """Collect metrics from the output directory into tables and series."""
    cfg, out = _cfg(ctx), _out(ctx)
    report: dict = {}
    lines = []
    ab = out / "ablation.json"
    if ab.exists():
        with open(ab) as f:
            grid = json.load(f)
        report["ablation_median_deg"] = grid
        lines.append("orientation error (median deg):")
        for k in sorted(grid):
            lines.append(f"  {k:28s} {grid[k]:7.2f}")
    for name, sub in (("gt_pose", "runs_gt"), ("learned", "runs")):
        mdir = out / sub / "manifest.json"
        if not mdir.exists():
            continue
        with open(mdir) as f:
            manifest = json.load(f)
        series_path = out / f"cross_track_{name}.jsonl"
        maxes = []
        with open(series_path, "w") as sf:
            for run_file in manifest["runs"]:
                rec = autom.load_run(out / sub / run_file)
                maxes.append(rec.metrics["cross_track_max_m"])
                for t, e in rec.metrics["cross_track_series"]:
                    sf.write(json.dumps({"run": rec.run_id, "t": t, "cross_track_m": e}) + "\n")
        report[f"autonomy_{name}"] = {
            "n_runs": manifest["n_runs"],
            "max_cross_track_m": max(maxes),
            "per_run_max_m": maxes,
        }
        lines.append(f"autonomy ({name}): {manifest['n_runs']} runs, worst max cross-track "
                     f"{max(maxes) * 100:.1f} cm (series -> {series_path.name})")
    if not report:
        raise click.ClickException(f"nothing to report in {out}")
    with open(out / "report.json", "w") as f:
        json.dump(report, f, sort_keys=True, indent=2)
        f.write("\n")
    click.echo("\n".join(lines))


if __name__ == "__main__":
    main()
