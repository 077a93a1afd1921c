import socket
import sys
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from abr_lab.mock_advisor import load_fixtures, serve
from abr_lab.model import default_ladder


@pytest.fixture
def ladder():
    return default_ladder()


class _Echo(BaseHTTPRequestHandler):
    def log_message(self, *args):
        pass

    def do_GET(self):
        delay = self.server.delay_s
        if delay == "never":
            self.server.release.wait()
            return
        if delay:
            time.sleep(delay)
        self.send_response(200)
        self.send_header("Content-Length", "2")
        self.end_headers()
        self.wfile.write(b"ok")


@pytest.fixture
def http_responder():
    """Factory for local HTTP responders: immediate, delayed (seconds) or 'never'."""
    servers = []

    def make(delay_s=0):
        httpd = ThreadingHTTPServer(("127.0.0.1", 0), _Echo)
        httpd.daemon_threads = True
        httpd.delay_s = delay_s
        httpd.release = threading.Event()
        threading.Thread(target=httpd.serve_forever, daemon=True).start()
        servers.append(httpd)
        return f"http://127.0.0.1:{httpd.server_address[1]}/"

    yield make
    for s in servers:
        s.release.set()
        s.shutdown()
        s.server_close()


@pytest.fixture
def mock_advisor():
    """Factory for bundled-fixture mock advisors with a given behavior."""
    running = []

    def make(behavior="normal", fixtures=None):
        srv = serve(fixtures or load_fixtures(), behavior)
        running.append(srv)
        return srv

    yield make
    for srv in running:
        srv.stop()


@pytest.fixture
def closed_port_url():
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    return f"http://127.0.0.1:{port}/advise"


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
