"""
loopback.py - Local HTTP facade over a simulated repository.

Lets the same scenarios run through the real HTTP connector:

    GET /datasets/<id>                  landing page (HTML)
    GET /datasets/<id>/<v>|latest       download
    GET /api/datasets/<id>/versions     JSON version listing
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from src.errors import NotFound
from src.repository.simulated import SimulatedRepository
from src.utils.logger import get_logger

logger = get_logger("repository.loopback")


def _make_handler(repository: SimulatedRepository):
    class FacadeHandler(BaseHTTPRequestHandler):
        def do_GET(self):  # noqa: N802
            path = self.path.split("?", 1)[0]
            parts = [p for p in path.split("/") if p]
            try:
                if parts[:2] == ["api", "datasets"] and len(parts) == 4 and parts[3] == "versions":
                    rows = [v.to_dict() for v in repository.list_versions(parts[2])]
                    self._send(200, json.dumps(rows).encode("utf-8"), "application/json")
                elif parts[:1] == ["datasets"] and len(parts) == 2:
                    body = repository.render_landing_page(parts[1]).encode("utf-8")
                    self._send(200, body, "text/html; charset=utf-8")
                elif parts[:1] == ["datasets"] and len(parts) == 3:
                    result = repository.download(path)
                    self._send(200, result.content, result.media_type or "application/octet-stream")
                else:
                    self._send(404, b"not found", "text/plain")
            except NotFound:
                self._send(404, b"not found", "text/plain")

        def _send(self, status: int, body: bytes, content_type: str) -> None:
            self.send_response(status)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def log_message(self, format, *args):
            logger.debug("%s - %s", self.address_string(), format % args)

    return FacadeHandler


class LoopbackFacade:
    """
    Serve ``repository`` on 127.0.0.1 in a background thread.

    While running, the repository's base URL points at the facade, so
    datasets registered afterwards get http:// links.
    """

    def __init__(self, repository: SimulatedRepository, port: int = 0):
        self.repository = repository
        self._server = ThreadingHTTPServer(("127.0.0.1", port), _make_handler(repository))
        self._server.daemon_threads = True
        self._thread: threading.Thread | None = None
        self._previous_base = repository.base_url

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    @property
    def api_base(self) -> str:
        return f"{self.base_url}/api"

    def start(self) -> "LoopbackFacade":
        self.repository.base_url = self.base_url
        self._thread = threading.Thread(target=self._server.serve_forever, name="loopback-facade", daemon=True)
        self._thread.start()
        logger.info(f"Loopback facade for {self.repository.repository_id} at {self.base_url}")
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread:
            self._thread.join(timeout=5)
        self.repository.base_url = self._previous_base

    def __enter__(self) -> "LoopbackFacade":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
