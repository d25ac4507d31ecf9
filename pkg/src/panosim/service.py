"""HTTP/WebSocket front-end for the simulator.

Endpoints:
    GET  /render         one-shot view render (PNG; pose/intrinsics in query)
    WS   /stream         pose messages in, binary frames out (latest wins)
    GET  /metrics        render timing percentiles + cache counters
    GET  /dataset/info   manifest summary
    GET  /capture/session, POST /capture/plan|trigger|mark
                         facade over the capture toolkit

Conventions: pose angles are radians, hfov on the wire is degrees, all
JSON fields snake_case. A binary frame is a 4-byte big-endian length,
that many bytes of JSON header, then the encoded image payload.

The overlay hook POSTs the frame's pose to a provider URL and expects a
matching RGBA PNG back; on timeout, error or size mismatch the plain
frame ships with overlay_missing set.
"""

from __future__ import annotations

import asyncio
import io
import json
import math
import struct
import threading
import time
from collections import deque
from contextlib import asynccontextmanager
from dataclasses import dataclass

import numpy as np
import requests
from fastapi import FastAPI, Query, Response, WebSocket, WebSocketDisconnect
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from PIL import Image

from .cache import CacheConfig, PanoCache, make_file_loader, predict_cells
from .capture import CaptureManager, CaptureStateError, OscError
from .dataset import GridIndex, load_manifest
from .geometry import CameraIntrinsics, Orientation
from .renderer import (
    DEFAULT_LAMBDA,
    CameraPose,
    Frame,
    RenderRequest,
    composite_over,
    render,
)

HULL_MARGIN_CELLS = 2.0  # requests farther than this many cells from data are 404


@dataclass
class ServiceConfig:
    dataset: str | None = None
    cache_capacity: int = 16
    workers: int = 1
    prefetch_depth: int = 2
    neighbor_k: int = 4
    lam: float = DEFAULT_LAMBDA
    overlay_url: str | None = None
    overlay_timeout_ms: float = 50.0
    camera_url: str | None = None
    capture_session: str | None = None
    capture_dir: str | None = None


class RenderMetrics:
    """Rolling render-time stats; snapshots are lock-consistent."""

    def __init__(self, window: int = 1024):
        self._lock = threading.Lock()
        self._ms: deque[float] = deque(maxlen=window)
        self._frames = 0

    def record(self, ms: float) -> None:
        with self._lock:
            self._ms.append(ms)
            self._frames += 1

    def snapshot(self) -> dict:
        with self._lock:
            times = sorted(self._ms)
            frames = self._frames
        if not times:
            return {"fps": 0.0, "render_ms_p50": 0.0, "render_ms_p99": 0.0, "frames": 0}
        p50 = times[int(0.50 * (len(times) - 1))]
        p99 = times[int(0.99 * (len(times) - 1))]
        mean = sum(times) / len(times)
        return {
            "fps": 1000.0 / mean if mean > 0 else 0.0,
            "render_ms_p50": p50,
            "render_ms_p99": p99,
            "frames": frames,
        }


class SimulatorState:
    """Everything the endpoints share: dataset, cache, metrics, hooks."""

    def __init__(self, config: ServiceConfig, loader=None, capture_manager=None):
        self.config = config
        self.metrics = RenderMetrics()
        self.manifest = None
        self.grid: GridIndex | None = None
        self.cache: PanoCache | None = None
        if config.dataset:
            self.manifest = load_manifest(config.dataset)
            self.grid = GridIndex(self.manifest)
            cache_cfg = CacheConfig(
                capacity=config.cache_capacity,
                workers=config.workers,
                prefetch_depth=config.prefetch_depth,
                neighbor_k=config.neighbor_k,
            )
            self.cache = PanoCache(
                self.grid, loader or make_file_loader(self.manifest, self.grid), cache_cfg
            )
        self.capture = capture_manager
        if self.capture is None and config.camera_url and config.capture_session:
            from .capture import CaptureSession, load_session
            import os

            if os.path.exists(config.capture_session):
                session = load_session(config.capture_session)
            else:
                session = CaptureSession(cell_size_m=0.2)
            self.capture = CaptureManager(
                session,
                config.camera_url,
                config.capture_dir or os.path.dirname(config.capture_session) or ".",
                session_path=config.capture_session,
            )
        self._overlay_http = requests.Session()

    def close(self) -> None:
        if self.cache is not None:
            self.cache.close()

    # frame pipeline ------------------------------------------------------

    def render_view(
        self,
        pose: CameraPose,
        intr: CameraIntrinsics,
        interp: bool,
        lam: float,
    ) -> tuple[Frame, bool | None]:
        """Render one frame; returns (frame, overlay_missing or None)."""
        cell = self.grid.nearest_cell(pose.x_m, pose.y_m)
        pano, stalled = self.cache.fetch(cell, for_render=True)
        t0 = time.perf_counter()
        frame = render(
            RenderRequest(pose=pose, intrinsics=intr, interpolate=interp, lam=lam),
            pano,
            cell_size_m=self.grid.cell_size_m,
            stalled=stalled,
        )
        self.metrics.record((time.perf_counter() - t0) * 1000.0)
        overlay_missing: bool | None = None
        if self.config.overlay_url:
            rgba = self._fetch_overlay(pose, intr)
            if rgba is None:
                overlay_missing = True
            else:
                frame = composite_over(frame, rgba)
                overlay_missing = False
        return frame, overlay_missing

    def _fetch_overlay(self, pose: CameraPose, intr: CameraIntrinsics) -> np.ndarray | None:
        doc = {
            "x": pose.x_m,
            "y": pose.y_m,
            "z": pose.z_m,
            "yaw": pose.orientation.yaw,
            "pitch": pose.orientation.pitch,
            "roll": pose.orientation.roll,
            "width": intr.width,
            "height": intr.height,
        }
        try:
            resp = self._overlay_http.post(
                self.config.overlay_url,
                json=doc,
                timeout=self.config.overlay_timeout_ms / 1000.0,
            )
            resp.raise_for_status()
            with Image.open(io.BytesIO(resp.content)) as im:
                rgba = np.asarray(im.convert("RGBA"), dtype=np.uint8)
        except (requests.RequestException, OSError, ValueError):
            return None
        if rgba.shape != (intr.height, intr.width, 4):
            return None
        return rgba


def encode_image(frame: Frame, fmt: str = "png") -> bytes:
    buf = io.BytesIO()
    Image.fromarray(frame.pixels).save(buf, format="JPEG" if fmt == "jpeg" else "PNG")
    return buf.getvalue()


def pack_frame_message(header: dict, payload: bytes) -> bytes:
    head = json.dumps(header).encode()
    return struct.pack(">I", len(head)) + head + payload


def unpack_frame_message(data: bytes) -> tuple[dict, bytes]:
    (hlen,) = struct.unpack_from(">I", data)
    header = json.loads(data[4 : 4 + hlen].decode())
    return header, data[4 + hlen :]


def create_app(
    config: ServiceConfig, loader=None, capture_manager=None
) -> FastAPI:
    state = SimulatorState(config, loader=loader, capture_manager=capture_manager)

    @asynccontextmanager
    async def lifespan(_app):
        yield
        state.close()

    app = FastAPI(title="panosim", lifespan=lifespan)
    app.state.sim = state

    @app.exception_handler(RequestValidationError)
    async def _bad_params(request, exc):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    def _require_dataset() -> JSONResponse | None:
        if state.grid is None:
            return JSONResponse(status_code=503, content={"detail": "dataset not loaded"})
        return None

    @app.get("/render")
    def render_endpoint(
        x: float,
        y: float,
        z: float = 0.0,
        yaw: float = 0.0,
        pitch: float = 0.0,
        roll: float = 0.0,
        width: int = 640,
        height: int = 480,
        hfov: float = 60.0,
        interp: bool = False,
        lam: float | None = Query(default=None, alias="lambda"),
    ):
        missing = _require_dataset()
        if missing is not None:
            return missing
        if width < 1 or height < 1 or not 0.0 < hfov < 180.0:
            return JSONResponse(
                status_code=400,
                content={"detail": f"bad intrinsics {width}x{height} hfov={hfov}"},
            )
        if state.grid.distance_to_nearest(x, y) > HULL_MARGIN_CELLS * state.grid.cell_size_m:
            return JSONResponse(
                status_code=404,
                content={"detail": f"position ({x}, {y}) outside dataset hull"},
            )
        pose = CameraPose(x, y, z, Orientation(yaw, pitch, roll))
        intr = CameraIntrinsics(width=width, height=height, hfov=math.radians(hfov))
        frame, overlay_missing = state.render_view(
            pose, intr, interp, state.config.lam if lam is None else lam
        )
        headers = {
            "x-source-pano-id": frame.source_pano_id,
            "x-stalled": "true" if frame.stalled else "false",
        }
        if overlay_missing is not None:
            headers["x-overlay-missing"] = "true" if overlay_missing else "false"
        return Response(content=encode_image(frame), media_type="image/png", headers=headers)

    @app.websocket("/stream")
    async def stream(ws: WebSocket):
        await ws.accept()
        if state.grid is None:
            await ws.send_json({"error": "dataset not loaded"})
            await ws.close(code=1013)
            return
        try:
            hs = await ws.receive_json()
            intr = CameraIntrinsics(
                width=int(hs["width"]),
                height=int(hs["height"]),
                hfov=math.radians(float(hs["hfov"])),
            )
            encode = str(hs.get("encode", "png"))
            interp = bool(hs.get("interp", False))
            lam = float(hs.get("lambda", state.config.lam))
            if encode not in ("png", "jpeg"):
                raise ValueError(f"unknown encode {encode!r}")
        except (WebSocketDisconnect, RuntimeError):
            return
        except Exception as e:  # handshake is untrusted client input
            await ws.send_json({"error": f"malformed handshake: {e}"})
            await ws.close(code=1008)
            return

        wake = asyncio.Event()
        pending: list[dict] = []  # latest-wins slot (len <= 1)
        error: list[str] = []
        closed = False

        async def reader() -> None:
            nonlocal closed
            last_t = -math.inf
            while True:
                try:
                    msg = await ws.receive_json()
                except (WebSocketDisconnect, RuntimeError):
                    closed = True
                    wake.set()
                    return
                except Exception:  # malformed client input
                    error.append("malformed message")
                    wake.set()
                    return
                try:
                    t = float(msg["t"])
                    if t <= last_t:
                        raise ValueError(f"non-monotonic t: {t} after {last_t}")
                    last_t = t
                    pose = CameraPose(
                        float(msg["x"]),
                        float(msg["y"]),
                        float(msg.get("z", 0.0)),
                        Orientation(
                            float(msg.get("yaw", 0.0)),
                            float(msg.get("pitch", 0.0)),
                            float(msg.get("roll", 0.0)),
                        ),
                        vx=float(msg.get("vx", 0.0)),
                        vy=float(msg.get("vy", 0.0)),
                    )
                except (KeyError, TypeError, ValueError) as e:
                    error.append(f"malformed message: {e}")
                    wake.set()
                    return
                plan = predict_cells(
                    pose,
                    state.grid,
                    depth=state.config.prefetch_depth,
                    neighbor_k=state.config.neighbor_k,
                )
                state.cache.prefetch(plan)
                if msg.get("want_frame"):
                    # overwrite any unserved request: the newest pose wins
                    pending.clear()
                    pending.append({"t": t, "pose": pose})
                    wake.set()

        reader_task = asyncio.create_task(reader())
        loop = asyncio.get_running_loop()
        seq = 0
        try:
            while True:
                await wake.wait()
                wake.clear()
                if error:
                    await ws.send_json({"error": error[0]})
                    await ws.close(code=1008)
                    return
                if closed:
                    return
                if not pending:
                    continue
                req = pending.pop()
                frame, overlay_missing = await loop.run_in_executor(
                    None, state.render_view, req["pose"], intr, interp, lam
                )
                seq += 1
                header = {
                    "seq": seq,
                    "t": req["t"],
                    "source_pano_id": frame.source_pano_id,
                    "stalled": frame.stalled,
                    "encode": encode,
                }
                if overlay_missing is not None:
                    header["overlay_missing"] = overlay_missing
                try:
                    await ws.send_bytes(pack_frame_message(header, encode_image(frame, encode)))
                except (WebSocketDisconnect, RuntimeError):
                    return
        finally:
            reader_task.cancel()

    @app.get("/metrics")
    def metrics():
        doc = state.metrics.snapshot()
        doc["cache"] = state.cache.stats().to_dict() if state.cache else None
        return doc

    @app.get("/dataset/info")
    def dataset_info():
        missing = _require_dataset()
        if missing is not None:
            return missing
        m = state.manifest
        min_x, min_y, max_x, max_y = state.grid.bounds()
        return {
            "version": m.version,
            "cell_size_m": m.cell_size_m,
            "pano_width": m.pano_width,
            "pano_height": m.pano_height,
            "records": len(m.records),
            "cells": len(state.grid),
            "px_per_deg": m.pano_width / 360.0,
            "bounds": {"min_x": min_x, "min_y": min_y, "max_x": max_x, "max_y": max_y},
        }

    def _require_capture() -> JSONResponse | None:
        if state.capture is None:
            return JSONResponse(
                status_code=503, content={"detail": "capture session not configured"}
            )
        return None

    @app.get("/capture/session")
    def capture_session():
        missing = _require_capture()
        if missing is not None:
            return missing
        return state.capture.snapshot()

    @app.post("/capture/plan")
    def capture_plan(body: dict):
        missing = _require_capture()
        if missing is not None:
            return missing
        try:
            cells = [(int(i), int(j)) for i, j in body["cells"]]
        except (KeyError, TypeError, ValueError) as e:
            return JSONResponse(status_code=400, content={"detail": f"bad plan: {e}"})
        added = state.capture.plan(cells)
        return {"added": added, "counts": state.capture.session.counts()}

    @app.post("/capture/trigger")
    def capture_trigger(body: dict):
        missing = _require_capture()
        if missing is not None:
            return missing
        try:
            cell = (int(body["cell"][0]), int(body["cell"][1]))
        except (KeyError, TypeError, ValueError, IndexError) as e:
            return JSONResponse(status_code=400, content={"detail": f"bad cell: {e}"})
        st = state.capture.session.cells.get(cell)
        if st is not None and st.status == "failed":
            state.capture.retry(cell)  # a failed cell may be re-triggered
        try:
            command_id = state.capture.trigger(cell)
        except CaptureStateError as e:
            return JSONResponse(status_code=409, content={"detail": str(e)})
        except (OscError, requests.RequestException) as e:
            return JSONResponse(
                status_code=502, content={"detail": f"camera unreachable: {e}"}
            )
        return {"command_id": command_id, "cell": list(cell), "status": "in_flight"}

    @app.post("/capture/mark")
    def capture_mark(body: dict):
        missing = _require_capture()
        if missing is not None:
            return missing
        try:
            cell = (int(body["cell"][0]), int(body["cell"][1]))
            file = str(body["file"])
        except (KeyError, TypeError, ValueError, IndexError) as e:
            return JSONResponse(status_code=400, content={"detail": f"bad mark: {e}"})
        try:
            state.capture.mark(cell, file)
        except CaptureStateError as e:
            return JSONResponse(status_code=409, content={"detail": str(e)})
        return {"cell": list(cell), "counts": state.capture.session.counts()}

    return app
