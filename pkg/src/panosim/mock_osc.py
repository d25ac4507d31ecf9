"""In-process mock of an Open Spherical Camera for tests and demos.

Speaks just enough of the OSC level-2 protocol for the capture toolkit:
camera.takePicture via /osc/commands/execute, /osc/commands/status
polling, and photo download. Every shot produces a small 2:1 JPEG.

Scriptable failure modes: a fixed number of inProgress status responses
before done, an OSC error envelope, and truncated downloads.

Run standalone with ``python -m panosim.mock_osc --port 8800``.
"""

from __future__ import annotations

import io
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
from PIL import Image


def _make_jpeg(width: int, height: int, seed: int = 0) -> bytes:
    rng = np.random.default_rng(seed)
    pixels = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
    buf = io.BytesIO()
    Image.fromarray(pixels).save(buf, format="JPEG", quality=85)
    return buf.getvalue()


class MockOscCamera:
    """A fake Theta-style camera listening on localhost.

    Parameters
    ----------
    inprogress_polls: status responses that report inProgress before done.
    error_code: if set, execute answers with this OSC error envelope.
    truncate_download: announce the full Content-Length but send one byte.
    """

    def __init__(
        self,
        image_size: tuple[int, int] = (64, 32),
        inprogress_polls: int = 0,
        error_code: str | None = None,
        truncate_download: bool = False,
        port: int = 0,
    ):
        self.image_size = image_size
        self.inprogress_polls = inprogress_polls
        self.error_code = error_code
        self.truncate_download = truncate_download
        self._jpeg = _make_jpeg(*image_size)
        self._lock = threading.Lock()
        self._commands: dict[str, int] = {}  # command id -> status polls seen
        self._next_id = 0
        self.execute_calls = 0
        self.status_calls = 0
        self.download_calls = 0

        camera = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):  # quiet
                pass

            def _json(self, doc: dict, status: int = 200) -> None:
                body = json.dumps(doc).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_POST(self) -> None:
                length = int(self.headers.get("Content-Length", 0))
                payload = json.loads(self.rfile.read(length) or b"{}")
                if self.path == "/osc/commands/execute":
                    self._json(camera._execute(payload))
                elif self.path == "/osc/commands/status":
                    self._json(camera._status(payload))
                else:
                    self._json({"error": {"code": "unknownPath", "message": self.path}}, 404)

            def do_GET(self) -> None:
                if not self.path.startswith("/files/"):
                    self._json({"error": {"code": "unknownPath", "message": self.path}}, 404)
                    return
                with camera._lock:
                    camera.download_calls += 1
                data = camera._jpeg
                self.send_response(200)
                self.send_header("Content-Type", "image/jpeg")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                if camera.truncate_download:
                    self.wfile.write(data[:1])
                else:
                    self.wfile.write(data)

        self._server = ThreadingHTTPServer(("127.0.0.1", port), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    # protocol ------------------------------------------------------------

    def _execute(self, payload: dict) -> dict:
        with self._lock:
            self.execute_calls += 1
            if self.error_code:
                return {"error": {"code": self.error_code, "message": "scripted failure"}}
            if payload.get("name") != "camera.takePicture":
                return {"error": {"code": "unknownCommand", "message": str(payload.get("name"))}}
            self._next_id += 1
            cid = f"cmd{self._next_id}"
            self._commands[cid] = 0
            if self.inprogress_polls > 0:
                return {"name": "camera.takePicture", "id": cid, "state": "inProgress"}
            return self._done(cid)

    def _status(self, payload: dict) -> dict:
        with self._lock:
            self.status_calls += 1
            cid = str(payload.get("id"))
            if cid not in self._commands:
                return {"error": {"code": "invalidParameterValue", "message": f"unknown id {cid}"}}
            self._commands[cid] += 1
            if self._commands[cid] <= self.inprogress_polls:
                return {"name": "camera.takePicture", "id": cid, "state": "inProgress"}
            return self._done(cid)

    def _done(self, cid: str) -> dict:
        return {
            "name": "camera.takePicture",
            "id": cid,
            "state": "done",
            "results": {"fileUrl": f"{self.base_url}/files/{cid}.jpg"},
        }

    # lifecycle -----------------------------------------------------------

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "MockOscCamera":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self) -> "MockOscCamera":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def main() -> None:
    import argparse

    parser = argparse.ArgumentParser(description="Run a mock OSC camera")
    parser.add_argument("--port", type=int, default=8800)
    parser.add_argument("--inprogress-polls", type=int, default=1)
    args = parser.parse_args()
    cam = MockOscCamera(port=args.port, inprogress_polls=args.inprogress_polls).start()
    print(f"mock OSC camera at {cam.base_url} (ctrl-c to stop)")
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        cam.stop()


if __name__ == "__main__":
    main()
