"""
Event-driven playback model.

Segments are fetched one at a time at the trace's piecewise-constant
bandwidth. The buffer (in media-seconds) gains one segment per completed
download and drains in real time while playing. Fetching pauses while the
buffer is at or above the current target. Decisions take effect at the
next segment boundary (immediately if no segment is in flight).
"""

from __future__ import annotations

import logging
from bisect import bisect_right
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional, Protocol

from .model import (
    BitrateLadder,
    Decision,
    Resolution,
    StreamConfig,
    Trace,
    TracePoint,
    WindowStats,
    default_ladder,
    kbits_to_bytes,
)

logger = logging.getLogger(__name__)

_EPS_S = 1e-9
_EPS_BYTES = 1e-6


class SimError(Exception):
    pass


class TraceTooShort(SimError):
    pass


class InvalidDecisionOrder(SimError):
    pass


class BandwidthSource(Protocol):
    duration_s: float

    def point_at(self, t_s: float) -> TracePoint: ...

    def next_change_after(self, t_s: float) -> float: ...


@dataclass(frozen=True)
class SimConfig:
    trace: Trace
    session_duration_s: float
    segment_duration_s: float = 1.0
    startup_threshold_s: float = 2.0
    ladder: BitrateLadder = field(default_factory=default_ladder)
    # defaults to the lowest rung with a startup_threshold_s buffer
    initial_config: Optional[StreamConfig] = None

    def __post_init__(self):
        if self.session_duration_s <= 0 or self.segment_duration_s <= 0 or self.startup_threshold_s <= 0:
            raise ValueError("durations and thresholds must be positive")
        if self.initial_config is None:
            res = self.ladder.lowest
            init = StreamConfig(res, round(kbits_to_bytes(self.startup_threshold_s * res.nominal_bitrate_kbps)))
            object.__setattr__(self, "initial_config", init)
        if self.initial_config.resolution not in self.ladder:
            raise ValueError("initial resolution is not a ladder rung")


@dataclass
class PlaybackState:
    buffer_s: float = 0.0
    playing: bool = False
    stall_events: list = field(default_factory=list)  # [start_s, end_s]
    switches: list = field(default_factory=list)  # (t_s, from_label, to_label)
    bytes_downloaded: int = 0


@dataclass(frozen=True)
class SessionReport:
    session_duration_s: float
    stall_count: int
    total_stall_s: float
    rebuffer_ratio: float
    switch_count: int
    time_weighted_avg_height: float
    startup_s: float
    play_s: float
    bytes_downloaded: int
    segments_downloaded: int
    stall_events: tuple = ()
    switches: tuple = ()
    decisions: tuple = ()
    applied: tuple = ()  # (applied_at_s, Decision)
    windows: tuple = ()

    def to_dict(self) -> dict:
        return {
            "session_duration_s": self.session_duration_s,
            "stall_count": self.stall_count,
            "total_stall_s": self.total_stall_s,
            "rebuffer_ratio": self.rebuffer_ratio,
            "switch_count": self.switch_count,
            "time_weighted_avg_height": self.time_weighted_avg_height,
            "startup_s": self.startup_s,
            "play_s": self.play_s,
            "bytes_downloaded": self.bytes_downloaded,
            "segments_downloaded": self.segments_downloaded,
            "stall_events": [list(s) for s in self.stall_events],
            "switches": [list(s) for s in self.switches],
            "decisions": [d.to_dict() for d in self.decisions],
            "applied": [{"applied_at_s": t, "decision": d.to_dict()} for t, d in self.applied],
            "windows": [w.to_dict() for w in self.windows],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SessionReport":
        return cls(
            d["session_duration_s"],
            d["stall_count"],
            d["total_stall_s"],
            d["rebuffer_ratio"],
            d["switch_count"],
            d["time_weighted_avg_height"],
            d["startup_s"],
            d["play_s"],
            d["bytes_downloaded"],
            d["segments_downloaded"],
            tuple(tuple(s) for s in d["stall_events"]),
            tuple(tuple(s) for s in d["switches"]),
            tuple(Decision.from_dict(x) for x in d["decisions"]),
            tuple((a["applied_at_s"], Decision.from_dict(a["decision"])) for a in d["applied"]),
            tuple(WindowStats.from_dict(w) for w in d["windows"]),
        )


def segment_bytes(resolution: Resolution, segment_duration_s: float) -> int:
    return round(kbits_to_bytes(resolution.nominal_bitrate_kbps * segment_duration_s))


class PlaybackSimulator:
    """
    Incremental form of `simulate`: call advance_to(t) then submit(decision)
    for each decision in time order, then finish().

    The bandwidth source may grow while the simulation runs (live mode), as
    long as the simulator is never advanced past the last known point.
    """

    def __init__(self, cfg: SimConfig, bandwidth: Optional[BandwidthSource] = None, record_events: bool = True):
        self.cfg = cfg
        self.bw = bandwidth if bandwidth is not None else cfg.trace
        self.t = 0.0
        self.state = PlaybackState()
        self.current = cfg.initial_config
        self._decided_once = False
        self._fetch: Optional[list] = None  # [remaining_bytes, total_bytes, resolution]
        self._media: deque = deque()  # [height, seconds] of buffered segments
        self._pending: deque = deque()
        self._applied: list = []
        self._last_submitted = 0.0
        self._started_at: Optional[float] = None
        self._height_time = 0.0
        self._play_time = 0.0
        self._segments = 0
        self._finished = False
        self.events: Optional[list] = [] if record_events else None
        self._settle()

    # -- bookkeeping ----------------------------------------------------

    def _log(self, kind: str, detail: str = "") -> None:
        if self.events is not None:
            self.events.append((self.t, kind, detail))

    def _threshold(self) -> float:
        target = self.current.buffer_target_s
        base = target if self._decided_once else self.cfg.startup_threshold_s
        return min(base, target)

    def _rate_bytes(self, t: float) -> float:
        return kbits_to_bytes(self.bw.point_at(t).bandwidth_kbps)

    # -- continuous evolution -------------------------------------------

    def _advance_clock(self, t_new: float) -> None:
        if t_new <= self.t:
            return
        if self._fetch is not None:
            t = self.t
            delivered = 0.0
            while t < t_new:
                nxt = min(self.bw.next_change_after(t), t_new)
                delivered += self._rate_bytes(t) * (nxt - t)
                t = nxt
            self._fetch[0] -= delivered
        if self.state.playing:
            dt = t_new - self.t
            self.state.buffer_s = max(self.state.buffer_s - dt, 0.0)
            self._play_time += dt
            left = dt
            while left > 0 and self._media:
                head = self._media[0]
                take = min(left, head[1])
                self._height_time += head[0] * take
                head[1] -= take
                left -= take
                if head[1] <= _EPS_S:
                    self._media.popleft()
        self.t = t_new

    def _next_event(self) -> float:
        nxt = float("inf")
        st = self.state
        if self._fetch is not None:
            rate = self._rate_bytes(self.t)
            change = self.bw.next_change_after(self.t)
            done = self.t + self._fetch[0] / rate if rate > 0 else float("inf")
            nxt = min(nxt, done if done <= change else change)
        if st.playing:
            nxt = min(nxt, self.t + st.buffer_s)
            if self._fetch is None:
                nxt = min(nxt, self.t + max(st.buffer_s - self.current.buffer_target_s, 0.0))
        return nxt

    # -- discrete transitions -------------------------------------------

    def _settle(self) -> None:
        st = self.state
        if self._fetch is not None and self._fetch[0] <= _EPS_BYTES:
            _, nbytes, res = self._fetch
            self._fetch = None
            st.bytes_downloaded += nbytes
            st.buffer_s += self.cfg.segment_duration_s
            self._media.append([res.height, self.cfg.segment_duration_s])
            self._segments += 1
            self._log("segment-complete", f"{res.label} {nbytes}B buffer={st.buffer_s:.6f}")
        if st.playing and st.buffer_s <= _EPS_S:
            st.buffer_s = 0.0
            st.playing = False
            st.stall_events.append([self.t, None])
            self._log("stall-start")
        if self._fetch is None:
            self._apply_pending()
            if st.buffer_s < self.current.buffer_target_s + _EPS_S:
                res = self.current.resolution
                n = segment_bytes(res, self.cfg.segment_duration_s)
                self._fetch = [float(n), n, res]
                self._log("fetch-start", res.label)
        if not st.playing and st.buffer_s >= self._threshold() - _EPS_S:
            st.playing = True
            if self._started_at is None:
                self._started_at = self.t
                self._log("play-start")
            else:
                st.stall_events[-1][1] = self.t
                self._log("stall-end")

    def _apply_pending(self) -> None:
        if not self._pending or self._pending[0].decided_at_s > self.t + _EPS_S:
            return
        old = self.current.resolution
        while self._pending and self._pending[0].decided_at_s <= self.t + _EPS_S:
            d = self._pending.popleft()
            self.current = d.config
            self._decided_once = True
            self._applied.append((self.t, d))
            self._log("apply", f"{d.source.value} {d.config.resolution.label} {d.config.buffer_target_bytes}B")
        new = self.current.resolution
        if new != old:
            self.state.switches.append((self.t, old.label, new.label))
            self._log("switch", f"{old.label}->{new.label}")

    def _run(self, until: float) -> None:
        while True:
            te = self._next_event()
            if te >= until:
                self._advance_clock(until)
                return
            self._advance_clock(te)
            self._settle()

    # -- public API -------------------------------------------------------

    def advance_to(self, t: float) -> None:
        """Process every event strictly before t and move the clock to t."""
        if t < self.t - _EPS_S:
            raise InvalidDecisionOrder(f"cannot move simulator back from {self.t} to {t}")
        self._run(min(t, self.cfg.session_duration_s))

    def submit(self, decision: Decision) -> None:
        t = decision.decided_at_s
        if t < self._last_submitted - _EPS_S or t < 0:
            raise InvalidDecisionOrder(f"decision at {t} after one at {self._last_submitted}")
        if t > self.cfg.session_duration_s + _EPS_S:
            raise InvalidDecisionOrder(f"decision at {t} after session end {self.cfg.session_duration_s}")
        if decision.config.resolution not in self.cfg.ladder:
            raise InvalidDecisionOrder(f"decision resolution {decision.config.resolution.label} not in ladder")
        self.advance_to(t)
        self._last_submitted = t
        self._pending.append(decision)
        self._settle()

    def finish(self, decisions: Iterable[Decision] = (), windows: Iterable[WindowStats] = ()) -> SessionReport:
        end = self.cfg.session_duration_s
        self._run(end)
        st = self.state
        if st.stall_events and st.stall_events[-1][1] is None:
            st.stall_events[-1][1] = end
        # decisions still waiting on an in-flight segment: logged as applied at session end
        for d in self._pending:
            self._applied.append((end, d))
        self._pending.clear()
        stalls = tuple((a, b) for a, b in st.stall_events)
        total_stall = sum((b - a for a, b in stalls), 0.0)
        startup = self._started_at if self._started_at is not None else end
        self._finished = True
        return SessionReport(
            session_duration_s=end,
            stall_count=len(stalls),
            total_stall_s=total_stall,
            rebuffer_ratio=min(max(total_stall / end, 0.0), 1.0),
            switch_count=len(st.switches),
            time_weighted_avg_height=self._height_time / self._play_time if self._play_time > 0 else 0.0,
            startup_s=startup,
            play_s=self._play_time,
            bytes_downloaded=st.bytes_downloaded,
            segments_downloaded=self._segments,
            stall_events=stalls,
            switches=tuple(st.switches),
            decisions=tuple(decisions),
            applied=tuple(self._applied),
            windows=tuple(windows),
        )


def simulate(cfg: SimConfig, decision_stream: Iterable[Decision], record_events: bool = False) -> SessionReport:
    """Run a whole session against cfg.trace with an ordered decision stream."""
    if cfg.trace.duration_s < cfg.session_duration_s - _EPS_S:
        raise TraceTooShort(f"trace covers {cfg.trace.duration_s}s, session needs {cfg.session_duration_s}s")
    sim = PlaybackSimulator(cfg, record_events=record_events)
    seen = []
    for d in decision_stream:
        sim.submit(d)
        seen.append(d)
    return sim.finish(seen)


def compute_qoe(report: SessionReport, weights: tuple[float, float, float] = (1.0, 4.0, 1.0)) -> float:
    """Quality term minus rebuffering and switch-rate penalties; 1.0 = steady 1080p, no stalls."""
    w_q, w_r, w_s = weights
    n = len(report.decisions)
    switch_rate = report.switch_count / n if n else 0.0
    return w_q * report.time_weighted_avg_height / 1080 - w_r * report.rebuffer_ratio - w_s * switch_rate


class LiveTrace:
    """Append-only bandwidth source built from live samples."""

    def __init__(self):
        self._points: list[TracePoint] = []
        self._times: list[float] = []
        self.duration_s = 0.0

    def append(self, point: TracePoint, known_until: float) -> None:
        if self._points and point.t_s <= self._points[-1].t_s:
            raise ValueError("live trace points must strictly increase")
        if not self._points and point.t_s != 0:
            raise ValueError("first live trace point must be at t = 0")
        self._points.append(point)
        self._times.append(point.t_s)
        self.duration_s = known_until

    def point_at(self, t_s: float) -> TracePoint:
        return self._points[max(bisect_right(self._times, t_s) - 1, 0)]

    def next_change_after(self, t_s: float) -> float:
        i = bisect_right(self._times, t_s)
        return self._times[i] if i < len(self._times) else float("inf")

    def freeze(self) -> Trace:
        return Trace(tuple(self._points), max(self.duration_s, self._points[-1].t_s if self._points else 0.0))
