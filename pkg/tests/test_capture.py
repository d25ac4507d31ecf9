import json
import math
import os
from datetime import datetime, timedelta, timezone

import pytest
import requests

from panosim.capture import (
    CaptureSession,
    CaptureStateError,
    OscError,
    TruncatedDownloadError,
    capture_cell,
    download,
    load_session,
    mark_captured,
    poll,
    save_session,
    take_picture,
    throughput_and_eta,
    wait_for_done,
)
from panosim.dataset import load_manifest
from panosim.mock_osc import MockOscCamera


@pytest.fixture()
def camera():
    with MockOscCamera() as cam:
        yield cam


def ts_sequence(n, spacing_s, start="2021-03-01T10:00:00+00:00"):
    t0 = datetime.fromisoformat(start)
    return [(t0 + timedelta(seconds=k * spacing_s)).isoformat() for k in range(n)]


def session_with(cells=((0, 0),), cell_size=0.2):
    s = CaptureSession(cell_size_m=cell_size)
    s.plan(list(cells))
    return s


class TestOscClient:
    def test_take_picture_immediate_done(self, camera):
        cmd = take_picture(camera.base_url)
        assert cmd.done
        assert cmd.file_url.endswith(".jpg")
        assert cmd.name == "camera.takePicture"

    def test_take_picture_in_progress_keeps_id(self):
        with MockOscCamera(inprogress_polls=2) as cam:
            cmd = take_picture(cam.base_url)
            assert cmd.state == "inProgress"
            assert cmd.id
            assert cmd.file_url is None

    def test_error_envelope_is_typed(self):
        with MockOscCamera(error_code="serviceUnavailable") as cam:
            with pytest.raises(OscError) as exc:
                take_picture(cam.base_url)
            assert exc.value.code == "serviceUnavailable"

    def test_poll_until_done_counts_polls(self):
        """3 inProgress status responses then done: exactly 4 polls."""
        with MockOscCamera(inprogress_polls=3) as cam:
            cmd = take_picture(cam.base_url)
            done = wait_for_done(cam.base_url, cmd, poll_interval=0.0)
            assert done.done and done.file_url
            assert cam.status_calls == 4

    def test_poll_unknown_id(self, camera):
        with pytest.raises(OscError, match="invalidParameterValue"):
            poll(camera.base_url, "nope")

    def test_download_writes_jpeg(self, camera, tmp_path):
        cmd = take_picture(camera.base_url)
        dest = str(tmp_path / "photo.jpg")
        assert download(cmd.file_url, dest) == dest
        with open(dest, "rb") as f:
            assert f.read(2) == b"\xff\xd8"

    def test_truncated_download_is_retryable_error(self, tmp_path):
        with MockOscCamera(truncate_download=True) as cam:
            cmd = take_picture(cam.base_url)
            with pytest.raises(TruncatedDownloadError):
                download(cmd.file_url, str(tmp_path / "x.jpg"))
            assert not os.path.exists(tmp_path / "x.jpg")


class TestCaptureCell:
    def test_happy_path_tags_exact_lattice_position(self, camera, tmp_path):
        session = session_with([(3, -2)], cell_size=0.2)
        capture_cell(session, (3, -2), camera.base_url, str(tmp_path), poll_interval=0.0)
        st = session.cells[(3, -2)]
        assert st.status == "captured"
        assert st.file and os.path.isfile(tmp_path / st.file)
        assert len(session.history) == 1

        manifest = load_manifest(str(tmp_path / "manifest.json"))
        rec = manifest.records[0]
        assert rec.x_m == 3 * 0.2 and rec.y_m == -2 * 0.2
        assert rec.cell(0.2) == (3, -2)
        # written at exact lattice coordinates, zero tolerance
        assert math.hypot(rec.x_m - 3 * 0.2, rec.y_m - (-2) * 0.2) == 0.0

    def test_camera_unreachable_marks_failed_manifest_untouched(self, tmp_path):
        session = session_with([(0, 0)])
        with pytest.raises(requests.RequestException):
            capture_cell(session, (0, 0), "http://127.0.0.1:9", str(tmp_path))
        assert session.cells[(0, 0)].status == "failed"
        assert session.cells[(0, 0)].error
        assert not os.path.exists(tmp_path / "manifest.json")
        assert session.history == []

    def test_two_cells_give_two_lattice_records(self, camera, tmp_path):
        session = session_with([(0, 0), (1, 0)])
        capture_cell(session, (0, 0), camera.base_url, str(tmp_path), poll_interval=0.0)
        capture_cell(session, (1, 0), camera.base_url, str(tmp_path), poll_interval=0.0)
        manifest = load_manifest(str(tmp_path / "manifest.json"))
        cells = sorted(r.cell(0.2) for r in manifest.records)
        assert cells == [(0, 0), (1, 0)]
        assert len(session.history) == 2

    def test_only_planned_cells_capture(self, camera, tmp_path):
        session = session_with([(0, 0)])
        capture_cell(session, (0, 0), camera.base_url, str(tmp_path), poll_interval=0.0)
        with pytest.raises(CaptureStateError, match="captured"):
            capture_cell(session, (0, 0), camera.base_url, str(tmp_path))
        with pytest.raises(CaptureStateError, match="unplanned"):
            capture_cell(session, (9, 9), camera.base_url, str(tmp_path))

    def test_failed_cell_can_be_retried(self, tmp_path, camera):
        session = session_with([(0, 0)])
        with pytest.raises(requests.RequestException):
            capture_cell(session, (0, 0), "http://127.0.0.1:9", str(tmp_path))
        session.retry((0, 0))
        assert session.cells[(0, 0)].status == "planned"
        capture_cell(session, (0, 0), camera.base_url, str(tmp_path), poll_interval=0.0)
        assert session.cells[(0, 0)].status == "captured"

    def test_mark_captured_manual_override(self):
        session = session_with([(0, 0), (1, 1)])
        mark_captured(session, (1, 1), "imgs/external.jpg")
        assert session.cells[(1, 1)].status == "captured"
        assert len(session.history) == 1
        with pytest.raises(CaptureStateError, match="already captured"):
            mark_captured(session, (1, 1), "imgs/other.jpg")


class TestCaptureManagerSequencing:
    def test_one_in_flight_cell_at_a_time(self, tmp_path):
        """The operator must leave the camera view between shots; a second
        trigger while one is in flight is refused."""
        from panosim.capture import CaptureManager

        with MockOscCamera(inprogress_polls=4) as cam:
            session = session_with([(0, 0), (1, 0)])
            manager = CaptureManager(
                session, cam.base_url, str(tmp_path), poll_interval=0.1
            )
            manager.trigger((0, 0))
            with pytest.raises(CaptureStateError, match="in flight"):
                manager.trigger((1, 0))
            manager.join(timeout=5.0)
            assert session.cells[(0, 0)].status == "captured"
            manager.trigger((1, 0))  # free again once the worker finished
            manager.join(timeout=5.0)
            assert session.cells[(1, 0)].status == "captured"


class TestThroughput:
    def test_rate_404_photos_in_137_minutes(self):
        """404 captures spread over 2 h 17 min comes to about 3/min."""
        session = session_with([(i, j) for i in range(21) for j in range(21)][:404])
        session.history = ts_sequence(404, spacing_s=137 * 60 / 403)
        for cell in list(session.cells)[:404]:
            session.cells[cell].status = "captured"
        te = throughput_and_eta(session)
        assert te.rate_per_min == pytest.approx(2.95, abs=0.01)
        assert te.eta_min == pytest.approx(0.0, abs=1e-9)

    def test_no_captures_rate_unavailable(self):
        session = session_with([(i, 0) for i in range(404)])
        te = throughput_and_eta(session)
        assert te.rate_per_min is None and te.eta_min is None

    def test_twenty_second_cadence(self):
        """10 captures at exactly 20 s spacing: 3/min; 90 left: ETA 30 min."""
        session = session_with([(i, 0) for i in range(100)])
        session.history = ts_sequence(10, spacing_s=20.0)
        for cell in list(session.cells)[:10]:
            session.cells[cell].status = "captured"
        te = throughput_and_eta(session)
        assert te.rate_per_min == pytest.approx(3.0)
        assert te.eta_min == pytest.approx(30.0)

    def test_moving_window(self):
        session = session_with([(i, 0) for i in range(20)])
        # 5 slow (60 s) then 5 fast (10 s) captures
        t0 = datetime(2021, 3, 1, tzinfo=timezone.utc)
        times, t = [], t0
        for k in range(10):
            times.append(t.isoformat())
            t += timedelta(seconds=60.0 if k < 5 else 10.0)
        session.history = times
        full = throughput_and_eta(session)
        recent = throughput_and_eta(session, window=5)
        assert recent.rate_per_min > full.rate_per_min


class TestSessionPersistence:
    def test_round_trip_identical_bytes(self, tmp_path):
        session = session_with([(0, 0), (2, -1), (5, 3)])
        session.cells[(2, -1)].status = "failed"
        session.cells[(2, -1)].error = "OscError: serviceUnavailable"
        mark_captured(session, (5, 3), "imgs/p.jpg", captured_at="2021-03-01T10:00:00+00:00")
        p1, p2 = str(tmp_path / "s1.json"), str(tmp_path / "s2.json")
        save_session(session, p1)
        save_session(load_session(p1), p2)
        with open(p1, "rb") as a, open(p2, "rb") as b:
            assert a.read() == b.read()

    def test_state_survives_reload(self, tmp_path):
        session = session_with([(0, 0), (1, 0)])
        mark_captured(session, (0, 0), "imgs/a.jpg")
        path = str(tmp_path / "session.json")
        save_session(session, path)
        loaded = load_session(path)
        assert loaded.cells[(0, 0)].status == "captured"
        assert loaded.cells[(1, 0)].status == "planned"
        assert loaded.counts()["captured"] == 1
        assert loaded.history == session.history

    def test_transitions_guarded(self):
        session = session_with([(0, 0)])
        with pytest.raises(CaptureStateError):
            session.retry((0, 0))  # only failed cells retry
