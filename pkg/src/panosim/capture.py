"""Open Spherical Camera client and capture-session bookkeeping.

Capturing a dataset is a manual walk: place the camera on a lattice
point, step out of view, trigger a shot, move on. The session file keeps
track of which cells are planned / in flight / captured / failed so the
operator can stop and resume, and the history of capture timestamps
drives the throughput and ETA readouts.

Camera protocol (OSC API level 2):
    POST {base}/osc/commands/execute  {"name": "camera.takePicture", "parameters": {}}
    POST {base}/osc/commands/status   {"id": "<command id>"}
    GET  <fileUrl>                    -> JPEG bytes
"""

from __future__ import annotations

import json
import math
import os
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone

import requests

from .dataset import DatasetManifest, PanoRecord, load_manifest, save_manifest

Cell = tuple[int, int]

PLANNED = "planned"
IN_FLIGHT = "in_flight"
CAPTURED = "captured"
FAILED = "failed"

JPEG_MAGIC = b"\xff\xd8"

class OscError(Exception):
    """The camera answered with an OSC error envelope."""

    def __init__(self, code: str, message: str = ""):
        super().__init__(f"OSC error {code}: {message}" if message else f"OSC error {code}")
        self.code = code
        self.message = message

class TruncatedDownloadError(Exception):
    """Fewer bytes arrived than the camera announced; safe to retry."""

class CaptureStateError(Exception):
    """A session operation was applied to a cell in the wrong state."""

@dataclass
class OscCommand:
    name: str
    id: str
    state: str  # inProgress | done | error
    file_url: str | None = None

    @property
    def done(self) -> bool:
        return self.state == "done"

def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()

def _parse_command(payload: dict) -> OscCommand:
    if "error" in payload:
        err = payload["error"] or {}
        raise OscError(err.get("code", "unknown"), err.get("message", ""))
    if payload.get("state") == "error":
        err = payload.get("results", {}).get("error", {})
        raise OscError(err.get("code", "unknown"), err.get("message", ""))
    return OscCommand(
        name=payload.get("name", ""),
        id=str(payload.get("id", "")),
        state=payload.get("state", ""),
        file_url=(payload.get("results") or {}).get("fileUrl"),
    )

def take_picture(camera_base_url: str, timeout: float = 10.0) -> OscCommand:
    resp = requests.post(
        f"{camera_base_url}/osc/commands/execute",
        json={"name": "camera.takePicture", "parameters": {}},
        timeout=timeout,
    )
    return _parse_command(resp.json())

def poll(camera_base_url: str, command_id: str, timeout: float = 10.0) -> OscCommand:
    resp = requests.post(
        f"{camera_base_url}/osc/commands/status",
        json={"id": command_id},
        timeout=timeout,
    )
    return _parse_command(resp.json())

def wait_for_done(
    camera_base_url: str,
    cmd: OscCommand,
    poll_interval: float = 0.5,
    max_polls: int = 600,
) -> OscCommand:
    """Poll the command until the camera reports done (or errors out)."""
    for _ in range(max_polls):
        if cmd.done:
            return cmd
        if poll_interval:
            time.sleep(poll_interval)
        cmd = poll(camera_base_url, cmd.id)
    raise OscError("timeout", f"command {cmd.id} not done after {max_polls} polls")

def download(file_url: str, dest: str, timeout: float = 30.0) -> str:
    """Stream the photo to dest, verifying size and JPEG magic bytes."""
    resp = requests.get(file_url, stream=True, timeout=timeout)
    resp.raise_for_status()
    expected = resp.headers.get("Content-Length")
    tmp = dest + ".part"
    received = 0
    try:
        with open(tmp, "wb") as f:
            for chunk in resp.iter_content(chunk_size=65536):
                f.write(chunk)
                received += len(chunk)
    except (requests.exceptions.ChunkedEncodingError, requests.exceptions.ConnectionError) as e:
        os.unlink(tmp)
        raise TruncatedDownloadError(f"{file_url}: interrupted after {received} bytes") from e
    if expected is not None and received != int(expected):
        os.unlink(tmp)
        raise TruncatedDownloadError(
            f"{file_url}: got {received} of {expected} bytes"
        )
    with open(tmp, "rb") as f:
        magic = f.read(2)
    if magic != JPEG_MAGIC:
        os.unlink(tmp)
        raise TruncatedDownloadError(f"{file_url}: not a JPEG (magic {magic!r})")
    os.replace(tmp, dest)
    return dest

# ---------------------------------------------------------------------------
# Capture session
# ---------------------------------------------------------------------------

@dataclass
class CellState:
    status: str = PLANNED
    file: str | None = None
    captured_at: str | None = None
    error: str | None = None

@dataclass
class CaptureSession:
    cell_size_m: float
    cells: dict[Cell, CellState] = field(default_factory=dict)
    started_at: str = field(default_factory=_utcnow)
    history: list[str] = field(default_factory=list)

    def plan(self, cells: list[Cell]) -> int:
        added = 0
        for c in cells:
            if c not in self.cells:
                self.cells[c] = CellState()
                added += 1
        return added

    def counts(self) -> dict[str, int]:
        out = {PLANNED: 0, IN_FLIGHT: 0, CAPTURED: 0, FAILED: 0}
        for st in self.cells.values():
            out[st.status] += 1
        return out

    def retry(self, cell: Cell) -> None:
        st = self.cells[cell]
        if st.status != FAILED:
            raise CaptureStateError(f"cell {cell} is {st.status}, only failed cells retry")
        self.cells[cell] = CellState()

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "cell_size_m": self.cell_size_m,
            "started_at": self.started_at,
            "history": list(self.history),
            "cells": {
                f"{i},{j}": {
                    "status": st.status,
                    "file": st.file,
                    "captured_at": st.captured_at,
                    "error": st.error,
                }
                for (i, j), st in self.cells.items()
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CaptureSession":
        cells = {}
        for key, st in doc.get("cells", {}).items():
            i, j = key.split(",")
            cells[(int(i), int(j))] = CellState(
                status=st["status"],
                file=st.get("file"),
                captured_at=st.get("captured_at"),
                error=st.get("error"),
            )
        return cls(
            cell_size_m=float(doc["cell_size_m"]),
            cells=cells,
            started_at=doc.get("started_at", ""),
            history=list(doc.get("history", [])),
        )

def save_session(session: CaptureSession, path: str) -> None:
    """Canonical JSON, written via temp file + rename (crash safe)."""
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(session.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)

def load_session(path: str) -> CaptureSession:
    with open(path, "r", encoding="utf-8") as f:
        return CaptureSession.from_dict(json.load(f))

@dataclass
class ThroughputEta:
    rate_per_min: float | None
    eta_min: float | None

def throughput_and_eta(session: CaptureSession, window: int | None = None) -> ThroughputEta:
    """Photos per minute over the capture history and minutes remaining.

    Rate is (n-1) photos over the time between the first and last
    timestamps of the window; unavailable until two captures exist.
    """
    hist = session.history[-window:] if window else session.history
    if len(hist) < 2:
        return ThroughputEta(None, None)
    t0 = datetime.fromisoformat(hist[0])
    t1 = datetime.fromisoformat(hist[-1])
    elapsed_min = (t1 - t0).total_seconds() / 60.0
    if elapsed_min <= 0:
        return ThroughputEta(None, None)
    rate = (len(hist) - 1) / elapsed_min
    counts = session.counts()
    remaining = counts[PLANNED] + counts[IN_FLIGHT] + counts[FAILED]
    return ThroughputEta(rate, remaining / rate if rate > 0 else None)

# ---------------------------------------------------------------------------
# The full capture flow for one cell
# ---------------------------------------------------------------------------

def capture_cell(
    session: CaptureSession,
    cell: Cell,
    camera_base_url: str,
    dataset_dir: str,
    manifest_name: str = "manifest.json",
    poll_interval: float = 0.5,
    session_path: str | None = None,
    z_m: float = 0.0,
) -> CaptureSession:
    """Photograph one planned cell: trigger, poll, download, tag.

    On success the photo lands in the dataset folder, the manifest gains
    a record at exactly (i*d, j*d), and the cell flips to captured. Any
    failure flips it to failed (with the reason) and leaves the manifest
    untouched; the cell can be retried.
    """
    st = session.cells.get(cell)
    if st is None or st.status != PLANNED:
        raise CaptureStateError(
            f"cell {cell} is {st.status if st else 'unplanned'}, expected planned"
        )
    st.status = IN_FLIGHT
    if session_path:
        save_session(session, session_path)
    try:
        cmd = take_picture(camera_base_url)
        complete_capture(
            session,
            cell,
            cmd,
            camera_base_url,
            dataset_dir,
            manifest_name=manifest_name,
            poll_interval=poll_interval,
            session_path=session_path,
            z_m=z_m,
        )
    except Exception as e:  # any failure is recorded on the cell; caller decides
        st.status = FAILED
        st.error = f"{type(e).__name__}: {e}"
        if session_path:
            save_session(session, session_path)
        raise
    return session

def _cell_record_id(cell: Cell) -> str:
    i, j = cell
    return f"p{i:+04d}{j:+04d}".replace("+", "p").replace("-", "m")

def fetch_photo(cmd: OscCommand, camera_base_url: str, dataset_dir: str, cell: Cell,
                poll_interval: float = 0.5) -> str:
    """Poll the command to completion and download the photo; returns the
    dataset-relative file path. Pure network/disk, touches no session state."""
    cmd = wait_for_done(camera_base_url, cmd, poll_interval=poll_interval)
    if not cmd.file_url:
        raise OscError("missingFileUrl", f"command {cmd.id} done without fileUrl")
    rel = os.path.join("imgs", _cell_record_id(cell) + ".jpg")
    os.makedirs(os.path.join(dataset_dir, "imgs"), exist_ok=True)
    download(cmd.file_url, os.path.join(dataset_dir, rel))
    return rel

def record_capture(
    session: CaptureSession,
    cell: Cell,
    rel_file: str,
    dataset_dir: str,
    manifest_name: str = "manifest.json",
    session_path: str | None = None,
    z_m: float = 0.0,
) -> None:
    """Tag a downloaded photo: manifest record at exactly (i*d, j*d), cell
    flips to captured, timestamp appended to history."""
    i, j = cell
    ts = _utcnow()
    _append_manifest_record(
        dataset_dir,
        manifest_name,
        PanoRecord(
            id=_cell_record_id(cell),
            file=rel_file,
            x_m=i * session.cell_size_m,
            y_m=j * session.cell_size_m,
            z_m=z_m,
            captured_at=ts,
        ),
        session.cell_size_m,
    )
    st = session.cells[cell]
    st.status = CAPTURED
    st.file = rel_file
    st.captured_at = ts
    st.error = None
    session.history.append(ts)
    if session_path:
        save_session(session, session_path)

def complete_capture(
    session: CaptureSession,
    cell: Cell,
    cmd: OscCommand,
    camera_base_url: str,
    dataset_dir: str,
    manifest_name: str = "manifest.json",
    poll_interval: float = 0.5,
    session_path: str | None = None,
    z_m: float = 0.0,
) -> None:
    """Finish an in-flight capture from its OSC command (poll, download, tag)."""
    rel = fetch_photo(cmd, camera_base_url, dataset_dir, cell, poll_interval=poll_interval)
    record_capture(
        session,
        cell,
        rel,
        dataset_dir,
        manifest_name=manifest_name,
        session_path=session_path,
        z_m=z_m,
    )

def mark_captured(
    session: CaptureSession,
    cell: Cell,
    file: str,
    captured_at: str | None = None,
    session_path: str | None = None,
) -> None:
    """Record an externally produced photo for a cell (manual override)."""
    st = session.cells.get(cell)
    if st is None:
        raise CaptureStateError(f"cell {cell} is not part of the session")
    if st.status == CAPTURED:
        raise CaptureStateError(f"cell {cell} already captured")
    ts = captured_at or _utcnow()
    st.status = CAPTURED
    st.file = file
    st.captured_at = ts
    st.error = None
    session.history.append(ts)
    if session_path:
        save_session(session, session_path)

def _append_manifest_record(
    dataset_dir: str, manifest_name: str, record: PanoRecord, cell_size_m: float
) -> None:
    from PIL import Image

    path = os.path.join(dataset_dir, manifest_name)
    with Image.open(os.path.join(dataset_dir, record.file)) as im:
        w, h = im.size
    if os.path.exists(path):
        manifest = load_manifest(path, check_files=False)
        if (w, h) != (manifest.pano_width, manifest.pano_height):
            raise ValueError(
                f"photo is {w}x{h}, dataset is {manifest.pano_width}x{manifest.pano_height}"
            )
        if not math.isclose(manifest.cell_size_m, cell_size_m):
            raise ValueError(
                f"session cell size {cell_size_m} != manifest {manifest.cell_size_m}"
            )
        manifest.records.append(record)
    else:
        manifest = DatasetManifest(
            version=1,
            cell_size_m=cell_size_m,
            pano_width=w,
            pano_height=h,
            records=[record],
            root=dataset_dir,
        )
    save_manifest(manifest, path)

# ---------------------------------------------------------------------------
# Serialized capture manager used by the service facade
# ---------------------------------------------------------------------------

class CaptureManager:
    """Single-writer wrapper around a session: one in-flight cell at a time.

    trigger() fires the camera synchronously (so the caller gets the OSC
    command id) and finishes the poll/download/tag flow on a background
    thread; the UI polls session state to observe completion.
    """

    def __init__(
        self,
        session: CaptureSession,
        camera_base_url: str,
        dataset_dir: str,
        session_path: str | None = None,
        poll_interval: float = 0.5,
    ):
        self.session = session
        self.camera_base_url = camera_base_url
        self.dataset_dir = dataset_dir
        self.session_path = session_path
        self.poll_interval = poll_interval
        self._lock = threading.Lock()
        self._worker: threading.Thread | None = None

    def snapshot(self) -> dict:
        with self._lock:
            doc = self.session.to_dict()
            te = throughput_and_eta(self.session)
            doc["counts"] = self.session.counts()
            doc["rate_per_min"] = te.rate_per_min
            doc["eta_min"] = te.eta_min
            total = len(self.session.cells)
            doc["progress"] = (
                self.session.counts()[CAPTURED] / total if total else 0.0
            )
            return doc

    def plan(self, cells: list[Cell]) -> int:
        with self._lock:
            added = self.session.plan(cells)
            self._persist()
            return added

    def mark(self, cell: Cell, file: str) -> None:
        with self._lock:
            mark_captured(self.session, cell, file, session_path=self.session_path)

    def retry(self, cell: Cell) -> None:
        with self._lock:
            self.session.retry(cell)
            self._persist()

    def trigger(self, cell: Cell) -> str:
        """Start capturing a planned cell; returns the OSC command id."""
        with self._lock:
            st = self.session.cells.get(cell)
            if st is None or st.status != PLANNED:
                raise CaptureStateError(
                    f"cell {cell} is {st.status if st else 'unplanned'}, expected planned"
                )
            if self._worker is not None and self._worker.is_alive():
                raise CaptureStateError("another capture is in flight")
            cmd = take_picture(self.camera_base_url)  # may raise: camera unreachable
            st.status = IN_FLIGHT
            self._persist()
            self._worker = threading.Thread(
                target=self._finish, args=(cell, cmd), daemon=True
            )
            self._worker.start()
            return cmd.id

    def join(self, timeout: float | None = None) -> None:
        w = self._worker
        if w is not None:
            w.join(timeout)

    def _finish(self, cell: Cell, cmd: OscCommand) -> None:
        try:
            # network phase runs lock-free so UI snapshots stay responsive
            rel = fetch_photo(
                cmd,
                self.camera_base_url,
                self.dataset_dir,
                cell,
                poll_interval=self.poll_interval,
            )
            with self._lock:
                record_capture(
                    self.session,
                    cell,
                    rel,
                    self.dataset_dir,
                    session_path=self.session_path,
                )
        except Exception as e:  # surfaced via session state
            with self._lock:
                st = self.session.cells[cell]
                st.status = FAILED
                st.error = f"{type(e).__name__}: {e}"
                self._persist()

    def _persist(self) -> None:
        if self.session_path:
            save_session(self.session, self.session_path)
