from __future__ import annotations

import json
import socket
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from groundcheck.benchgen import DEFAULT_KNOBS, GeneratorConfig, gen_noisy, gen_synthetic
from groundcheck.judge import LexicalOracle


class StubService:
    """Local stand-in for the remote judge / generator HTTP services.

    ``mode`` picks the behaviour: ``ok`` answers with the lexical oracle,
    ``malformed`` returns an object without the expected field, ``error``
    replies 500 every time.
    """

    def __init__(self):
        self.mode = "ok"
        self.hits: list[tuple[str, dict, str | None]] = []
        oracle = LexicalOracle()
        service = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                service.hits.append((self.path, body, self.headers.get("Authorization")))
                if service.mode == "error":
                    self._reply(500, {"error": "boom"})
                elif service.mode == "malformed":
                    self._reply(200, {"unexpected": True})
                elif self.path == "/nli":
                    self._reply(200, {"entails": oracle.entails(body["premise"], body["hypothesis"])})
                elif self.path == "/decompose":
                    self._reply(200, {"claims": oracle.decompose(body["text"])})
                elif self.path == "/generate":
                    self._reply(200, {"text": f"Echo of {len(body['prompt'].split())} tokens."})
                else:
                    self._reply(404, {"error": "no route"})

            def _reply(self, status, obj):
                data = json.dumps(obj).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.server.server_address[1]}"
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    def paths(self) -> list[str]:
        return [p for p, _, _ in self.hits]


@pytest.fixture
def stub_service():
    svc = StubService()
    svc.thread.start()
    yield svc
    svc.server.shutdown()
    svc.server.server_close()


@pytest.fixture
def dead_url():
    """A localhost URL with nothing listening on it."""
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    return f"http://127.0.0.1:{port}"


@pytest.fixture(scope="session")
def small_synthetic():
    return gen_synthetic(GeneratorConfig(seed=11, n_records=12, evidences_per_record=6), DEFAULT_KNOBS)


@pytest.fixture(scope="session")
def small_noisy():
    return gen_noisy(GeneratorConfig(seed=12, n_records=12, evidences_per_record=8), DEFAULT_KNOBS)
