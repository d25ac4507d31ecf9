"""Operator command line: dataset checks, rendering, benchmarks, serving.

Angle conventions match the pose CSV format (t,x,y,z,yaw,pitch,roll;
seconds, meters, radians); field-of-view options are degrees.
"""

from __future__ import annotations

import csv
import json
import math
import os
import statistics
import time

import click

from . import capture as cap
from . import dataset as ds
from .cache import max_speed as speed_limit
from .geometry import CameraIntrinsics, Orientation
from .renderer import CameraPose, RenderRequest, image_mae, image_psnr, render


def _read_poses(path: str) -> list[tuple[float, CameraPose]]:
    poses = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        required = {"t", "x", "y", "z", "yaw", "pitch", "roll"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise click.ClickException(
                f"pose CSV {path} must have header t,x,y,z,yaw,pitch,roll"
            )
        for row in reader:
            poses.append(
                (
                    float(row["t"]),
                    CameraPose(
                        float(row["x"]),
                        float(row["y"]),
                        float(row["z"]),
                        Orientation(float(row["yaw"]), float(row["pitch"]), float(row["roll"])),
                    ),
                )
            )
    if not poses:
        raise click.ClickException(f"pose CSV {path} is empty")
    return poses


def _load(dataset: str) -> ds.DatasetManifest:
    try:
        return ds.load_manifest(dataset)
    except ds.DatasetError as e:
        raise click.ClickException(str(e)) from e


def _intrinsics(width: int, height: int, hfov_deg: float) -> CameraIntrinsics:
    return CameraIntrinsics(width=width, height=height, hfov=math.radians(hfov_deg))


def _pano_for(manifest: ds.DatasetManifest, grid: ds.GridIndex, pose: CameraPose):
    by_id = {r.id: r for r in manifest.records}
    return ds.load_panorama(manifest, by_id[grid.nearest(pose.x_m, pose.y_m)])


_view_options = [
    click.option("--width", default=640, show_default=True),
    click.option("--height", default=480, show_default=True),
    click.option("--hfov", default=60.0, show_default=True, help="horizontal FOV, degrees"),
    click.option("--interp/--no-interp", default=False, help="in-cell interpolation"),
    click.option("--lambda", "lam", default=0.5, show_default=True,
                 help="interpolation offset scale"),
]


def view_options(fn):
    for opt in reversed(_view_options):
        fn = opt(fn)
    return fn


@click.group()
def main() -> None:
    """Spherical-panorama camera simulator toolkit."""


@main.command()
@click.argument("dataset", type=click.Path(exists=True))
@click.option("--require-px-per-deg", default=10.0, show_default=True)
def validate(dataset: str, require_px_per_deg: float) -> None:
    """Audit a dataset: aspect, duplicates, files, angular resolution."""
    manifest = _load(dataset)
    report = ds.validate(manifest, require_px_per_deg)
    for line in report.summary_lines():
        click.echo(line)
    click.echo(f"records: {len(manifest.records)}, grid cells: {len(ds.GridIndex(manifest))}")
    if not report.passed:
        raise click.ClickException("dataset validation failed")
    click.echo("validation passed")


@main.command("render")
@click.argument("dataset", type=click.Path(exists=True))
@click.option("--pose", required=True, help="x,y,z,yaw,pitch,roll (meters, radians)")
@click.option("--out", required=True, type=click.Path())
@view_options
def render_cmd(dataset, pose, out, width, height, hfov, interp, lam) -> None:
    """Render one view to a PNG file."""
    from PIL import Image

    parts = [float(p) for p in pose.split(",")]
    if len(parts) != 6:
        raise click.ClickException("--pose needs 6 comma-separated numbers")
    manifest = _load(dataset)
    grid = ds.GridIndex(manifest)
    cam = CameraPose(parts[0], parts[1], parts[2], Orientation(parts[3], parts[4], parts[5]))
    pano = _pano_for(manifest, grid, cam)
    frame = render(
        RenderRequest(cam, _intrinsics(width, height, hfov), interp, lam),
        pano,
        cell_size_m=manifest.cell_size_m,
    )
    Image.fromarray(frame.pixels).save(out)
    click.echo(f"rendered {width}x{height} from {frame.source_pano_id} -> {out}")


@main.command()
@click.argument("dataset", type=click.Path(exists=True))
@click.option("--poses", "poses_csv", required=True, type=click.Path(exists=True))
@click.option("--out-dir", required=True, type=click.Path())
@view_options
def trajectory(dataset, poses_csv, out_dir, width, height, hfov, interp, lam) -> None:
    """Render every pose of a CSV trajectory into numbered PNGs."""
    from PIL import Image

    manifest = _load(dataset)
    grid = ds.GridIndex(manifest)
    poses = _read_poses(poses_csv)
    os.makedirs(out_dir, exist_ok=True)
    intr = _intrinsics(width, height, hfov)
    for k, (_t, cam) in enumerate(poses):
        pano = _pano_for(manifest, grid, cam)
        frame = render(RenderRequest(cam, intr, interp, lam), pano,
                       cell_size_m=manifest.cell_size_m)
        Image.fromarray(frame.pixels).save(os.path.join(out_dir, f"frame_{k:05d}.png"))
    click.echo(f"wrote {len(poses)} frames to {out_dir}")


def _emit_bench(doc: dict, as_json: bool) -> None:
    for key, val in doc.items():
        click.echo(f"{key}: {val:.3f}" if isinstance(val, float) else f"{key}: {val}")
    if as_json:
        click.echo(json.dumps(doc))


@main.command("bench-render")
@click.argument("dataset", type=click.Path(exists=True))
@click.option("--frames", default=1000, show_default=True)
@click.option("--width", default=640, show_default=True)
@click.option("--height", default=480, show_default=True)
@click.option("--hfov", default=60.0, show_default=True)
@click.option("--json", "as_json", is_flag=True, help="also print machine-readable JSON")
def bench_render(dataset, frames, width, height, hfov, as_json) -> None:
    """Measure render throughput on a resident panorama."""
    manifest = _load(dataset)
    grid = ds.GridIndex(manifest)
    pose = CameraPose(*_first_cell_xy(manifest), 0.0)
    pano = _pano_for(manifest, grid, pose)
    intr = _intrinsics(width, height, hfov)
    times = []
    for k in range(frames):
        cam = CameraPose(pose.x_m, pose.y_m, 0.0, Orientation(yaw=0.001 * k))
        t0 = time.perf_counter()
        render(RenderRequest(cam, intr), pano, cell_size_m=manifest.cell_size_m)
        times.append((time.perf_counter() - t0) * 1000.0)
    times.sort()
    doc = {
        "frames": frames,
        "ms_per_frame": statistics.fmean(times),
        "ms_p50": times[len(times) // 2],
        "ms_p99": times[int(0.99 * (len(times) - 1))],
        "fps": 1000.0 / statistics.fmean(times),
    }
    _emit_bench(doc, as_json)


@main.command("bench-load")
@click.argument("dataset", type=click.Path(exists=True))
@click.option("--images", default=20, show_default=True)
@click.option("--json", "as_json", is_flag=True, help="also print machine-readable JSON")
def bench_load(dataset, images, as_json) -> None:
    """Measure panorama decode latency over the dataset's files."""
    manifest = _load(dataset)
    times = []
    for k in range(images):
        rec = manifest.records[k % len(manifest.records)]
        t0 = time.perf_counter()
        ds.load_panorama(manifest, rec)
        times.append((time.perf_counter() - t0) * 1000.0)
    times.sort()
    doc = {
        "images": images,
        "decode_ms_mean": statistics.fmean(times),
        "decode_ms_p50": times[len(times) // 2],
        "decode_ms_p99": times[int(0.99 * (len(times) - 1))],
        "implied_max_speed_1_worker": speed_limit(
            manifest.cell_size_m, statistics.fmean(times) / 1000.0, 1
        ),
    }
    _emit_bench(doc, as_json)


@main.command("decimate-study")
@click.argument("dataset", type=click.Path(exists=True))
@click.option("--factors", default="1,5,10", show_default=True)
@click.option("--poses", "poses_csv", required=True, type=click.Path(exists=True))
@click.option("--out", "out_csv", required=True, type=click.Path())
@click.option("--width", default=320, show_default=True)
@click.option("--height", default=240, show_default=True)
@click.option("--hfov", default=60.0, show_default=True)
def decimate_study(dataset, factors, poses_csv, out_csv, width, height, hfov) -> None:
    """Image error per grid-decimation factor, against the dense baseline."""
    manifest = _load(dataset)
    poses = _read_poses(poses_csv)
    intr = _intrinsics(width, height, hfov)
    try:
        factor_list = sorted({int(f) for f in factors.split(",")})
    except ValueError as e:
        raise click.ClickException(f"bad --factors: {e}") from e

    baseline = []
    grid1 = ds.GridIndex(manifest)
    for _t, cam in poses:
        pano = _pano_for(manifest, grid1, cam)
        baseline.append(render(RenderRequest(cam, intr), pano,
                               cell_size_m=manifest.cell_size_m))

    rows = []
    for factor in factor_list:
        try:
            dec = ds.decimate(manifest, factor)
        except ds.DatasetError as e:
            raise click.ClickException(str(e)) from e
        grid = ds.GridIndex(dec)
        for idx, (_t, cam) in enumerate(poses):
            pano = _pano_for(dec, grid, cam)
            frame = render(RenderRequest(cam, intr), pano, cell_size_m=dec.cell_size_m)
            rows.append(
                {
                    "factor": factor,
                    "pose_index": idx,
                    "mae": image_mae(frame, baseline[idx]),
                    "psnr": image_psnr(frame, baseline[idx]),
                }
            )

    with open(out_csv, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=["factor", "pose_index", "mae", "psnr"])
        writer.writeheader()
        writer.writerows(rows)
    for factor in factor_list:
        maes = [r["mae"] for r in rows if r["factor"] == factor]
        click.echo(
            f"factor {factor} (grid {manifest.cell_size_m * factor * 100:.0f} cm): "
            f"mean MAE {statistics.fmean(maes):.3f}"
        )
    click.echo(f"wrote {len(rows)} rows to {out_csv}")


@main.command("max-speed")
@click.option("--cell-size", default=0.2, show_default=True, help="grid pitch, meters")
@click.option("--t-load", default=0.2, show_default=True, help="decode time, seconds")
@click.option("--workers", default=1, show_default=True)
@click.option("--json", "as_json", is_flag=True)
def max_speed(cell_size, t_load, workers, as_json) -> None:
    """Aggregate speed limit sustainable without decode stalls."""
    v = speed_limit(cell_size, t_load, workers)
    click.echo(f"{v} m/s")
    if as_json:
        click.echo(json.dumps({"cell_size_m": cell_size, "t_load_s": t_load,
                               "workers": workers, "max_speed_m_s": v}))


@main.command()
@click.option("--dataset", type=click.Path(exists=True), default=None,
              help="manifest JSON; omit for capture-only mode")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8700, show_default=True)
@click.option("--cache-capacity", default=16, show_default=True)
@click.option("--workers", default=1, show_default=True)
@click.option("--prefetch-depth", default=2, show_default=True)
@click.option("--lambda", "lam", default=0.5, show_default=True)
@click.option("--overlay-url", default=None)
@click.option("--overlay-timeout-ms", default=50.0, show_default=True)
@click.option("--camera-url", default=None, help="OSC camera for the capture API")
@click.option("--capture-session", default=None, type=click.Path(),
              help="session JSON to serve/extend")
def serve(dataset, host, port, cache_capacity, workers, prefetch_depth, lam,
          overlay_url, overlay_timeout_ms, camera_url, capture_session) -> None:
    """Run the frame-serving HTTP/WebSocket service."""
    import uvicorn

    from .service import ServiceConfig, create_app

    config = ServiceConfig(
        dataset=dataset,
        cache_capacity=cache_capacity,
        workers=workers,
        prefetch_depth=prefetch_depth,
        lam=lam,
        overlay_url=overlay_url,
        overlay_timeout_ms=overlay_timeout_ms,
        camera_url=camera_url,
        capture_session=capture_session,
    )
    uvicorn.run(create_app(config), host=host, port=port)


@main.command("capture-init")
@click.option("--cells", "cells_csv", required=True, type=click.Path(exists=True),
              help="CSV with header i,j of lattice cells to photograph")
@click.option("--cell-size", default=0.2, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def capture_init(cells_csv, cell_size, out_path) -> None:
    """Create a capture session file with every listed cell planned."""
    cells = []
    with open(cells_csv, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or not {"i", "j"}.issubset(reader.fieldnames):
            raise click.ClickException(f"cells CSV {cells_csv} must have header i,j")
        for row in reader:
            cells.append((int(row["i"]), int(row["j"])))
    if not cells:
        raise click.ClickException("no cells listed")
    session = cap.CaptureSession(cell_size_m=cell_size)
    session.plan(cells)
    cap.save_session(session, out_path)
    click.echo(f"planned {len(cells)} cells at {cell_size} m -> {out_path}")


def _first_cell_xy(manifest: ds.DatasetManifest) -> tuple[float, float]:
    rec = min(manifest.records, key=lambda r: r.cell(manifest.cell_size_m))
    return rec.x_m, rec.y_m


if __name__ == "__main__":
    main()
