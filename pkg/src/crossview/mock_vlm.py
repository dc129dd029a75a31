"""In-process HTTP stand-in for the re-rank endpoint.

Speaks the wire contract natively: POST /v1/rerank with the request
JSON, 200 with a ranking/justification body. Behavior is chosen by the
server-wide mode, overridable per request through the X-Mock-Mode
header, so one server can exercise every failure path:

- identity: ranking 1..K in order
- reverse: ranking K..1
- oracle: ranks the true match first; needs a truth sidecar and text
  payloads that decode to reference ids
- garbage: cycles deterministically through malformed bodies
- http500: responds 500
- slow: sleeps before answering (drive client timeouts)

GET /health answers 200 for readiness polling.
"""

from __future__ import annotations

import base64
import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

MODES = ("identity", "reverse", "oracle", "garbage", "http500", "slow")

# Each entry maps k to one malformed body; the server cycles through
# them so a long fuzz run sees every variant.
GARBAGE_VARIANTS = (
    lambda k: "this is not json {",
    lambda k: json.dumps({"rank": list(range(1, k + 1)), "justification": "wrong key"}),
    lambda k: json.dumps({"ranking": [1] + list(range(1, k)), "justification": "dup"}),
    lambda k: json.dumps({"ranking": list(range(1, k)), "justification": "short"}),
    lambda k: json.dumps({"ranking": list(range(0, k)), "justification": "off by one"}),
    lambda k: json.dumps({"ranking": [i + 0.5 for i in range(k)], "justification": "floats"}),
    lambda k: json.dumps({"ranking": list(range(1, k + 1)), "justification": ""}),
    lambda k: "",
)


def _decode_text_payload(image: dict) -> str | None:
    """Recover the reference string from a text payload; None if binary."""
    try:
        return base64.b64decode(image.get("data", ""), validate=True).decode("utf-8")
    except (ValueError, UnicodeDecodeError):
        return None


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, format, *args):  # silence per-request stderr noise
        pass

    def _send(self, status: int, body: str, content_type="application/json"):
        payload = body.encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def do_GET(self):
        if self.path == "/health":
            self._send(200, json.dumps({"status": "ok", "mode": self.server.mode}))
        else:
            self._send(404, json.dumps({"error": "not found"}))

    def do_POST(self):
        if self.path != "/v1/rerank":
            self._send(404, json.dumps({"error": "not found"}))
            return
        with self.server.garbage_lock:
            self.server.request_count += 1
            self.server.last_auth = self.headers.get("Authorization")
        length = int(self.headers.get("Content-Length", "0"))
        raw = self.rfile.read(length)
        try:
            request = json.loads(raw)
        except json.JSONDecodeError:
            self._send(400, json.dumps({"error": "request body is not JSON"}))
            return

        images = request.get("images") or []
        candidates = [img for img in images if img.get("role") == "candidate"]
        k = len(candidates)
        if k < 1:
            self._send(400, json.dumps({"error": "no candidate images"}))
            return

        mode = self.headers.get("X-Mock-Mode", self.server.mode)
        if mode not in MODES:
            self._send(400, json.dumps({"error": f"unknown mode {mode!r}"}))
            return

        if mode == "http500":
            self._send(500, json.dumps({"error": "simulated server failure"}))
            return
        if mode == "slow":
            time.sleep(self.server.slow_delay)
            self._send(200, _identity_body(k, "answered after a delay"))
            return
        if mode == "garbage":
            with self.server.garbage_lock:
                variant = GARBAGE_VARIANTS[self.server.garbage_counter % len(GARBAGE_VARIANTS)]
                self.server.garbage_counter += 1
            self._send(200, variant(k))
            return
        if mode == "reverse":
            body = json.dumps(
                {
                    "ranking": list(range(k, 0, -1)),
                    "justification": "candidates considered in reverse order",
                }
            )
            self._send(200, body)
            return
        if mode == "oracle":
            self._send(200, self._oracle_body(request, candidates, k))
            return
        self._send(200, _identity_body(k, "retrieval order kept"))

    def _oracle_body(self, request: dict, candidates: list[dict], k: int) -> str:
        """Rank the ground-truth match first when it can be identified."""
        query = next((img for img in request.get("images", []) if img.get("role") == "query"), None)
        query_id = _decode_text_payload(query) if query else None
        truth = self.server.truth or {}
        true_ref = truth.get(query_id) if query_id is not None else None
        ranking = list(range(1, k + 1))
        justification = "true match unknown; retrieval order kept"
        if true_ref is not None:
            for pos, img in enumerate(candidates, start=1):
                if _decode_text_payload(img) == true_ref:
                    ranking = [pos] + [i for i in ranking if i != pos]
                    justification = f"candidate {pos} matches the true reference {true_ref}"
                    break
        return json.dumps({"ranking": ranking, "justification": justification})


def _identity_body(k: int, justification: str) -> str:
    return json.dumps({"ranking": list(range(1, k + 1)), "justification": justification})


class MockVlmServer:
    """Threaded mock endpoint; use as a context manager in tests.

    ``truth`` maps query id to true reference id for oracle mode;
    ``slow_delay`` is the sleep in seconds for slow mode.
    """

    def __init__(
        self,
        mode: str = "identity",
        port: int = 0,
        truth: dict[str, str] | None = None,
        slow_delay: float = 2.0,
    ):
        if mode not in MODES:
            raise ValueError(f"unknown mock mode {mode!r}; pick one of {MODES}")
        self._httpd = ThreadingHTTPServer(("127.0.0.1", port), _Handler)
        self._httpd.daemon_threads = True
        self._httpd.mode = mode
        self._httpd.truth = truth
        self._httpd.slow_delay = slow_delay
        self._httpd.garbage_counter = 0
        self._httpd.garbage_lock = threading.Lock()
        self._httpd.request_count = 0
        self._httpd.last_auth = None
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    @property
    def request_count(self) -> int:
        return self._httpd.request_count

    @property
    def last_auth(self) -> str | None:
        return self._httpd.last_auth

    @property
    def endpoint(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    def start(self) -> "MockVlmServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None

    def serve_forever(self) -> None:
        """Foreground serving for the mock-serve CLI subcommand."""
        try:
            self._httpd.serve_forever()
        finally:
            self._httpd.server_close()

    def __enter__(self) -> "MockVlmServer":
        return self.start()

    def __exit__(self, *exc_info) -> None:
        self.stop()
