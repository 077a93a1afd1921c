"""
Session orchestration.

Two activities run concurrently and talk over one ordered channel:

  monitor (A): probe -> tumbling window -> policy -> hysteresis -> Decision
  playback (B): applies each Decision at the next segment boundary

Scripted user overrides reach A through their own ordered queue. In trace
mode A runs on virtual time (no sleeps) so a session replays identically;
in live mode A samples on wall time and B plays against the measured rates.
"""

from __future__ import annotations

import logging
import queue
import threading
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Protocol, Union

from .aggregator import Fluctuation, FluctuationTracker, TumblingWindow
from .model import (
    BitrateLadder,
    Decision,
    NetworkSample,
    Resolution,
    Source,
    StreamConfig,
    Trace,
    TracePoint,
    WindowStats,
    constant_trace,
    default_ladder,
    kbits_to_bytes,
)
from .policy import Hysteresis
from .probe import LiveProbe, trace_samples
from .sim import LiveTrace, PlaybackSimulator, SessionReport, SimConfig, TraceTooShort
from .telemetry import DecisionLog, MetricsLog

logger = logging.getLogger(__name__)


class Policy(Protocol):
    name: str

    def decide(self, stats: WindowStats, current: StreamConfig) -> Decision: ...


@dataclass(frozen=True)
class Override:
    t_s: float
    resolution_label: str

    @classmethod
    def parse(cls, text: str) -> "Override":
        """'20:360p' -> Override(20.0, '360p')"""
        t, _, label = text.partition(":")
        if not label:
            raise ValueError(f"override must look like <t_s>:<label>, got {text!r}")
        return cls(float(t), label)


@dataclass(frozen=True)
class SessionConfig:
    duration_s: float
    ladder: BitrateLadder = field(default_factory=default_ladder)
    interval_s: float = 1.0
    window_s: float = 3.0
    fluct_threshold: float = 0.15
    # False: decide on every sample with no fluctuation handling
    averaging: bool = True
    segment_duration_s: float = 1.0
    base_buffer_s: float = 2.0
    startup_threshold_s: Optional[float] = None

    def __post_init__(self):
        if self.duration_s <= 0 or self.interval_s <= 0:
            raise ValueError("duration and interval must be positive")

    def initial_config(self) -> StreamConfig:
        res = self.ladder.lowest
        return StreamConfig(res, round(kbits_to_bytes(self.base_buffer_s * res.nominal_bitrate_kbps)))

    def sim_config(self, trace: Trace) -> SimConfig:
        return SimConfig(
            trace=trace,
            session_duration_s=self.duration_s,
            segment_duration_s=self.segment_duration_s,
            startup_threshold_s=self.startup_threshold_s or self.base_buffer_s,
            ladder=self.ladder,
            initial_config=self.initial_config(),
        )


class DecisionEngine:
    """Activity A's decision core: samples in, at most one Decision per window out."""

    def __init__(
        self,
        policy: Policy,
        ladder: BitrateLadder,
        initial: StreamConfig,
        window_s: float = 3.0,
        fluct_threshold: float = 0.15,
        averaging: bool = True,
    ):
        self.policy = policy
        self.ladder = ladder
        self.window = TumblingWindow(window_s if averaging else 0.0)
        self.tracker = FluctuationTracker(fluct_threshold) if averaging else None
        self.hysteresis = Hysteresis(initial)
        self.pinned: Optional[Resolution] = None
        self.windows: list[WindowStats] = []

    @property
    def current(self) -> StreamConfig:
        return self.hysteresis.current

    def override(self, ov: Override) -> Decision:
        res = self.ladder.by_label(ov.resolution_label)
        self.pinned = res
        config = self.current.with_resolution(res)
        self.hysteresis.current = config
        return Decision(config, Source.USER_OVERRIDE, "user-selected", ov.t_s)

    def push(self, sample: NetworkSample) -> Optional[Decision]:
        stats = self.window.push(sample)
        if stats is None:
            return None
        self.windows.append(stats)
        candidate = self.policy.decide(stats, self.current)
        fluct = self.tracker.classify(stats) if self.tracker is not None else Fluctuation.SHIFTED
        if self.pinned is not None:
            config = candidate.config.with_resolution(self.pinned)
            self.hysteresis.current = config
            return Decision(config, candidate.source, "user-pinned", candidate.decided_at_s)
        return self.hysteresis.filter(candidate, fluct)


_DONE = object()


@dataclass
class _Failure:
    exc: BaseException


def _monitor(
    samples: Iterable[NetworkSample],
    engine: DecisionEngine,
    overrides: "queue.Queue[Override]",
    channel: queue.Queue,
    metrics_log: Optional[MetricsLog],
    decision_log: Optional[DecisionLog],
    forward_samples: bool,
) -> None:
    """Activity A. Everything it emits goes onto `channel` in order."""
    pending_ov: list[Override] = []

    def emit(d: Decision) -> None:
        if decision_log is not None:
            decision_log.log_decision(d)
        channel.put(d)

    try:
        for s in samples:
            while True:
                try:
                    pending_ov.append(overrides.get_nowait())
                except queue.Empty:
                    break
            pending_ov.sort(key=lambda o: o.t_s)
            while pending_ov and pending_ov[0].t_s <= s.timestamp:
                emit(engine.override(pending_ov.pop(0)))
            if metrics_log is not None:
                metrics_log.log_sample(s)
            if forward_samples:
                channel.put(s)
            d = engine.push(s)
            if d is not None:
                emit(d)
    except BaseException as exc:  # handed to B, re-raised there
        channel.put(_Failure(exc))
        return
    channel.put(_DONE)


def _drain(channel: queue.Queue) -> Iterator[Union[Decision, NetworkSample]]:
    while True:
        item = channel.get()
        if item is _DONE:
            return
        if isinstance(item, _Failure):
            raise item.exc
        yield item


def run_session(
    source: Union[Trace, LiveProbe],
    policy: Policy,
    cfg: SessionConfig,
    overrides: Iterable[Override] = (),
    metrics_log: Optional[MetricsLog] = None,
    decision_log: Optional[DecisionLog] = None,
    events: Optional[list] = None,
) -> SessionReport:
    """
    Run one session and return its report. `events`, if given, receives the
    playback event log as (t_s, kind, detail) tuples.
    """
    initial = cfg.initial_config()
    engine = DecisionEngine(policy, cfg.ladder, initial, cfg.window_s, cfg.fluct_threshold, cfg.averaging)
    ov_queue: "queue.Queue[Override]" = queue.Queue()
    for ov in sorted(overrides, key=lambda o: o.t_s):
        if not 0 <= ov.t_s < cfg.duration_s:
            raise ValueError(f"override at {ov.t_s}s outside session")
        cfg.ladder.by_label(ov.resolution_label)
        ov_queue.put(ov)
    channel: queue.Queue = queue.Queue()

    live = isinstance(source, LiveProbe)
    if live:
        bandwidth = LiveTrace()
        sim = PlaybackSimulator(cfg.sim_config(constant_trace(cfg.duration_s, 0.0, 1.0)), bandwidth)
        samples: Iterable[NetworkSample] = source.samples(cfg.duration_s)
    else:
        if source.duration_s < cfg.duration_s:
            raise TraceTooShort(f"trace covers {source.duration_s}s, session needs {cfg.duration_s}s")
        sim = PlaybackSimulator(cfg.sim_config(source), record_events=events is not None)
        samples = trace_samples(source, cfg.interval_s, cfg.duration_s)

    monitor = threading.Thread(
        target=_monitor,
        args=(samples, engine, ov_queue, channel, metrics_log, decision_log, live),
        name="monitor",
        daemon=True,
    )
    monitor.start()

    emitted: list[Decision] = []
    prev_t = 0.0
    for item in _drain(channel):
        if isinstance(item, NetworkSample):
            # measured rate over (prev_t, t] becomes the bandwidth for that span
            t = min(item.timestamp, cfg.duration_s)
            if t > prev_t:
                bandwidth.append(TracePoint(prev_t, item.kbps_in, item.latency_ms or 1.0), t)
                sim.advance_to(t)
                prev_t = t
            continue
        emitted.append(item)
        sim.submit(item)
    monitor.join()
    if live:
        if not emitted and prev_t == 0.0:
            logger.warning("live session produced no samples")
        if prev_t < cfg.duration_s:
            # no measurements past prev_t: assume the last measured rate holds
            if prev_t == 0.0:
                bandwidth.append(TracePoint(0.0, 0.0, 1.0), cfg.duration_s)
            else:
                bandwidth.duration_s = cfg.duration_s
    report = sim.finish(emitted, engine.windows)
    if events is not None and sim.events is not None:
        events.extend(sim.events)
    return report


def replay_decisions(
    samples: Iterable[NetworkSample],
    policy: Policy,
    cfg: SessionConfig,
    decision_log: Optional[DecisionLog] = None,
) -> list[Decision]:
    """Re-run the monitor/decide path over recorded samples."""
    engine = DecisionEngine(policy, cfg.ladder, cfg.initial_config(), cfg.window_s, cfg.fluct_threshold, cfg.averaging)
    out = []
    for s in samples:
        d = engine.push(s)
        if d is not None:
            out.append(d)
            if decision_log is not None:
                decision_log.log_decision(d)
    return out
