"""
Local HTTP server speaking the advisor protocol, answering from a fixture
table. Supports injected delay, dropped requests and malformed replies.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from importlib import resources
from pathlib import Path
from typing import Optional, Union

from .policy import AdvisorRequest, AdvisorResponse, InvalidResponse

logger = logging.getLogger(__name__)


class BindError(OSError):
    pass


Range = Optional[tuple[float, float]]


def _in_range(value: Optional[float], rng: Range) -> bool:
    if rng is None:
        return True
    return value is not None and rng[0] <= value <= rng[1]


def _ranges_intersect(a: Range, b: Range) -> bool:
    if a is None or b is None:
        return True
    return a[0] <= b[1] and b[0] <= a[1]


@dataclass(frozen=True)
class Fixture:
    """Inclusive input ranges; a missing range matches anything."""

    response: AdvisorResponse
    avg_latency_ms: Range = None
    avg_kbps_in: Range = None
    name: str = ""

    def matches(self, req: AdvisorRequest) -> bool:
        return _in_range(req.avg_latency_ms, self.avg_latency_ms) and _in_range(req.avg_kbps_in, self.avg_kbps_in)

    def overlaps(self, other: "Fixture") -> bool:
        return _ranges_intersect(self.avg_latency_ms, other.avg_latency_ms) and _ranges_intersect(
            self.avg_kbps_in, other.avg_kbps_in
        )


@dataclass(frozen=True)
class FixtureTable:
    fixtures: tuple[Fixture, ...]
    default: AdvisorResponse

    def __post_init__(self):
        object.__setattr__(self, "fixtures", tuple(self.fixtures))
        for i, a in enumerate(self.fixtures):
            for b in self.fixtures[i + 1:]:
                if a.overlaps(b):
                    raise ValueError(f"fixtures {a.name or i!r} and {b.name!r} overlap")

    def lookup(self, req: AdvisorRequest) -> AdvisorResponse:
        for fx in self.fixtures:
            if fx.matches(req):
                return fx.response
        return self.default

    @classmethod
    def from_dict(cls, d: dict) -> "FixtureTable":
        if "default" not in d:
            raise ValueError("fixture file needs a last-resort 'default' response")
        fixtures = []
        for i, f in enumerate(d.get("fixtures", [])):
            match = f.get("match", {})
            unknown = set(match) - {"avg_latency_ms", "avg_kbps_in"}
            if unknown:
                raise ValueError(f"fixture {i}: unknown match keys {sorted(unknown)}")
            fixtures.append(
                Fixture(
                    AdvisorResponse.from_wire(f["response"]),
                    _range(match.get("avg_latency_ms")),
                    _range(match.get("avg_kbps_in")),
                    f.get("name", f"fixture-{i}"),
                )
            )
        return cls(tuple(fixtures), AdvisorResponse.from_wire(d["default"]))


def _range(r) -> Range:
    if r is None:
        return None
    lo, hi = r
    if lo > hi:
        raise ValueError(f"empty range {r}")
    return (float(lo), float(hi))


def load_fixtures(path: Union[str, Path, None] = None) -> FixtureTable:
    """Load a fixture table; with no path, the bundled table (includes the 1080p / 1355984 B case)."""
    if path is None:
        text = resources.files("abr_lab").joinpath("data/advisor_fixtures.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return FixtureTable.from_dict(json.loads(text))


@dataclass(frozen=True)
class Behavior:
    kind: str = "normal"
    delay_ms: float = 0.0

    @classmethod
    def parse(cls, text: str) -> "Behavior":
        if text in ("normal", "drop", "malformed"):
            return cls(text)
        if text.startswith("delay:"):
            ms = float(text.split(":", 1)[1])
            if ms < 0:
                raise ValueError("delay must be non-negative")
            return cls("delay", ms)
        raise ValueError(f"unknown behavior {text!r} (normal|delay:<ms>|drop|malformed)")


class _Handler(BaseHTTPRequestHandler):
    server: "_Server"

    def log_message(self, fmt, *args):
        logger.debug("mock-advisor: " + fmt, *args)

    def _send(self, code: int, body: bytes) -> None:
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        raw = self.rfile.read(length)
        behavior = self.server.behavior
        if behavior.kind == "drop":
            # hold the connection open without answering until shutdown
            self.server.stopping.wait()
            self.close_connection = True
            return
        try:
            req = AdvisorRequest.from_wire(json.loads(raw))
        except (ValueError, InvalidResponse) as exc:
            self._send(400, json.dumps({"error": str(exc)}).encode())
            return
        self.server.requests.append(req)
        if behavior.kind == "delay":
            time.sleep(behavior.delay_ms / 1000)
        if behavior.kind == "malformed":
            self._send(200, b'{"resolution": ')
            return
        resp = self.server.table.lookup(req)
        self._send(200, json.dumps(resp.to_wire()).encode())


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    table: FixtureTable
    behavior: Behavior
    stopping: threading.Event
    requests: list


class MockAdvisorServer:
    """Running server handle; usable as a context manager."""

    def __init__(self, table: FixtureTable, behavior: Behavior = Behavior(), host: str = "127.0.0.1", port: int = 0):
        try:
            self._httpd = _Server((host, port), _Handler)
        except OSError as exc:
            raise BindError(f"cannot bind {host}:{port}: {exc}") from exc
        self._httpd.table = table
        self._httpd.behavior = behavior
        self._httpd.stopping = threading.Event()
        self._httpd.requests = []
        self._thread: Optional[threading.Thread] = None

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}/advise"

    @property
    def requests(self) -> list[AdvisorRequest]:
        return list(self._httpd.requests)

    def start(self) -> "MockAdvisorServer":
        if self._thread is not None:
            return self
        self._thread = threading.Thread(target=self._httpd.serve_forever, args=(0.05,), name="mock-advisor", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.stopping.set()
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def serve_forever(self) -> None:
        try:
            self._httpd.serve_forever()
        finally:
            self._httpd.stopping.set()
            self._httpd.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
        return False


def serve(
    fixtures: Optional[FixtureTable] = None,
    behavior: Union[Behavior, str] = "normal",
    host: str = "127.0.0.1",
    port: int = 0,
) -> MockAdvisorServer:
    if isinstance(behavior, str):
        behavior = Behavior.parse(behavior)
    return MockAdvisorServer(fixtures or load_fixtures(), behavior, host, port).start()
