from __future__ import annotations

import shutil
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"
_ACCEPTANCE: list[str] = []


@pytest.fixture
def acceptance_log():
    """Callable that records one pass/fail line for the terminal summary."""
    def record(line: str) -> None:
        print(line)
        _ACCEPTANCE.append(line)
    return record


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def golden_copy(tmp_path) -> Path:
    """Writable copy of the golden fixture directory."""
    dest = tmp_path / "golden"
    shutil.copytree(FIXTURES / "golden", dest, ignore=shutil.ignore_patterns("out", "cache"))
    return dest


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)


class _Counts(dict):
    def hit(self, key):
        self[key] = self.get(key, 0) + 1


@pytest.fixture
def link_server():
    """Local HTTP server: /ok 200, /missing 404, /gone 410, /slow sleeps, /flaky 503 then 200.

    Yields ``(base_url, counts)``; counts maps ``(method, path)`` to hits.
    """
    import threading
    import time
    from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

    counts = _Counts()
    lock = threading.Lock()

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def _reply(self, send_body: bool):
            path = self.path.split("?")[0]
            with lock:
                counts.hit((self.command, path))
                n = counts[(self.command, path)]
            if path == "/slow":
                time.sleep(1.0)
                status = 200
            elif path == "/missing":
                status = 404
            elif path == "/gone":
                status = 410
            elif path == "/flaky":
                status = 503 if n == 1 else 200
            elif path == "/forbidden-head":
                status = 405 if self.command == "HEAD" else 200
            else:
                status = 200
            body = b"<html>README repository files navigation requirements.txt</html>"
            try:
                self.send_response(status)
                self.send_header("Content-Type", "text/html")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                if send_body:
                    self.wfile.write(body)
            except (BrokenPipeError, ConnectionResetError):
                pass

        def do_HEAD(self):
            self._reply(False)

        def do_GET(self):
            self._reply(True)

    server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    server.daemon_threads = True
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"http://127.0.0.1:{server.server_address[1]}", counts
    finally:
        server.shutdown()
        server.server_close()
