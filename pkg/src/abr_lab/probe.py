"""
Network probing: data rate from cumulative byte-counter deltas, latency from
timed round trips, and trace sampling for simulated sessions.
"""

from __future__ import annotations

import logging
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Protocol

from .model import NetworkSample, Trace, bytes_to_kbits

logger = logging.getLogger(__name__)


class ProbeError(Exception):
    pass


class CounterWrap(ProbeError):
    """A cumulative byte counter went backwards; discard the pair and re-baseline."""


class InvalidInterval(ProbeError):
    pass


class ProbeFailed(ProbeError):
    pass


class OutOfRange(ProbeError):
    pass


@dataclass(frozen=True)
class CounterReading:
    timestamp_s: float
    rx_bytes: int
    tx_bytes: int

    def __post_init__(self):
        if self.rx_bytes < 0 or self.tx_bytes < 0:
            raise ValueError("byte counters must be non-negative")


@dataclass(frozen=True)
class ProbeConfig:
    interval_s: float = 1.0
    latency_timeout_ms: float = 2000.0

    def __post_init__(self):
        if self.interval_s <= 0:
            raise ValueError("interval_s must be positive")
        if self.latency_timeout_ms <= 0:
            raise ValueError("latency_timeout_ms must be positive")


def compute_data_rate(prev: CounterReading, curr: CounterReading) -> tuple[float, float]:
    """Return (kbps_in, kbps_out) between two counter readings."""
    dt = curr.timestamp_s - prev.timestamp_s
    if not dt > 0:
        raise InvalidInterval(f"timestamps must increase ({prev.timestamp_s} -> {curr.timestamp_s})")
    d_rx = curr.rx_bytes - prev.rx_bytes
    d_tx = curr.tx_bytes - prev.tx_bytes
    if d_rx < 0 or d_tx < 0:
        raise CounterWrap(f"counter went backwards (rx {d_rx:+d}, tx {d_tx:+d})")
    return bytes_to_kbits(d_rx) / dt, bytes_to_kbits(d_tx) / dt


class CounterSource(Protocol):
    def read(self) -> tuple[int, int]:
        """Current cumulative (rx_bytes, tx_bytes)."""


class RoundTripSource(Protocol):
    def round_trip(self, timeout_s: float) -> None:
        """Send one request and block until its response arrives (or raise)."""


def measure_latency(prober: RoundTripSource, timeout_ms: float) -> float:
    """Time one round trip in milliseconds; raises ProbeFailed on error or timeout."""
    timeout_s = timeout_ms / 1000
    start = time.perf_counter()
    try:
        prober.round_trip(timeout_s)
    except (OSError, TimeoutError, urllib.error.URLError) as exc:
        raise ProbeFailed(f"round trip failed: {exc}") from exc
    elapsed_ms = (time.perf_counter() - start) * 1000
    if elapsed_ms > timeout_ms:
        raise ProbeFailed(f"round trip took {elapsed_ms:.1f} ms, timeout {timeout_ms} ms")
    return elapsed_ms


class HttpProber:
    """Round trip = one HTTP request to `url`, timed until the response body is read."""

    def __init__(self, url: str, method: str = "GET"):
        self.url = url
        self.method = method

    def round_trip(self, timeout_s: float) -> None:
        req = urllib.request.Request(self.url, method=self.method)
        try:
            with urllib.request.urlopen(req, timeout=timeout_s) as resp:
                resp.read()
        except urllib.error.HTTPError:
            # any HTTP response, even an error status, completes the round trip
            pass


class PsutilCounterSource:
    """OS interface byte counters; sums all interfaces unless one is named."""

    def __init__(self, interface: Optional[str] = None):
        import psutil

        self._psutil = psutil
        self.interface = interface
        if interface is not None and interface not in psutil.net_io_counters(pernic=True):
            raise ValueError(f"unknown network interface {interface!r}")

    def read(self) -> tuple[int, int]:
        if self.interface is None:
            c = self._psutil.net_io_counters()
        else:
            c = self._psutil.net_io_counters(pernic=True)[self.interface]
        return c.bytes_recv, c.bytes_sent


class LiveProbe:
    """
    Sampling loop over a counter source and an optional round-trip source.

    Emits one NetworkSample per interval, timestamped in seconds since the
    loop started. Counter wraps drop that interval and re-baseline; failed
    latency probes leave latency_ms as None.
    """

    def __init__(
        self,
        counters: CounterSource,
        prober: Optional[RoundTripSource] = None,
        config: ProbeConfig = ProbeConfig(),
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.counters = counters
        self.prober = prober
        self.config = config
        self.clock = clock
        self.sleep = sleep

    def _reading(self, t0: float) -> CounterReading:
        rx, tx = self.counters.read()
        return CounterReading(self.clock() - t0, rx, tx)

    def samples(self, duration_s: float, should_stop: Callable[[], bool] = lambda: False) -> Iterator[NetworkSample]:
        t0 = self.clock()
        prev = self._reading(t0)
        tick = 1
        while not should_stop():
            due = tick * self.config.interval_s
            if due > duration_s:
                break
            wait = due - (self.clock() - t0)
            if wait > 0:
                self.sleep(wait)
            tick += 1
            curr = self._reading(t0)
            try:
                kbps_in, kbps_out = compute_data_rate(prev, curr)
            except CounterWrap as exc:
                logger.warning("discarding sample at %.2fs: %s", curr.timestamp_s, exc)
                prev = curr
                continue
            except InvalidInterval:
                continue
            prev = curr
            latency = None
            if self.prober is not None:
                try:
                    latency = measure_latency(self.prober, self.config.latency_timeout_ms)
                except ProbeFailed as exc:
                    logger.info("latency probe failed at %.2fs: %s", curr.timestamp_s, exc)
            yield NetworkSample(curr.timestamp_s, kbps_in, kbps_out, latency)


def trace_sample(trace: Trace, t_s: float) -> NetworkSample:
    """Network conditions at t_s as a sample (step function; boundary belongs to the later point)."""
    if t_s < 0 or t_s > trace.duration_s:
        raise OutOfRange(f"t={t_s} outside trace [0, {trace.duration_s}]")
    p = trace.point_at(t_s)
    return NetworkSample(t_s, p.bandwidth_kbps, 0.0, p.latency_ms)


def trace_samples(trace: Trace, interval_s: float, duration_s: float) -> Iterator[NetworkSample]:
    """Samples at 0, interval, 2*interval, ... strictly before duration_s."""
    if duration_s > trace.duration_s:
        raise OutOfRange(f"session of {duration_s}s exceeds trace of {trace.duration_s}s")
    i = 0
    while True:
        t = i * interval_s
        if t >= duration_s - 1e-9:
            return
        yield trace_sample(trace, t)
        i += 1
