"""
Tumbling-window averaging of network samples and window-to-window
fluctuation classification.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .model import NetworkSample, WindowStats

# Tolerance for "span reached window_s" with float sample clocks.
_SPAN_EPS = 1e-9


class NonMonotonicTimestamp(ValueError):
    pass


class Fluctuation(str, Enum):
    STABLE = "stable"
    TRANSIENT = "transient"
    SHIFTED = "shifted"

    def __str__(self) -> str:
        return self.value


@dataclass
class TumblingWindow:
    """
    Collects samples until their span since the last emission reaches
    window_s, then emits the arithmetic means and starts a new window.

    The first window opens at the first sample and includes it; later
    windows open at the previous emission time and exclude that sample.
    window_s = 0 emits on every sample after the first (no averaging).
    """

    window_s: float = 3.0
    _start: Optional[float] = field(default=None, init=False)
    _last_t: Optional[float] = field(default=None, init=False)
    _samples: list = field(default_factory=list, init=False)

    def __post_init__(self):
        if self.window_s < 0:
            raise ValueError("window_s must be non-negative")

    def push(self, s: NetworkSample) -> Optional[WindowStats]:
        if self._last_t is not None and s.timestamp <= self._last_t:
            raise NonMonotonicTimestamp(f"sample at {s.timestamp} after {self._last_t}")
        self._last_t = s.timestamp
        self._samples.append(s)
        if self._start is None:
            self._start = s.timestamp
        span = s.timestamp - self._start
        if span <= 0 or span < self.window_s - _SPAN_EPS:
            return None
        stats = window_stats(self._samples, self._start, s.timestamp)
        self._start = s.timestamp
        self._samples = []
        return stats


def push_sample(window: TumblingWindow, s: NetworkSample) -> Optional[WindowStats]:
    return window.push(s)


def window_stats(samples: list[NetworkSample], start_s: float, end_s: float) -> WindowStats:
    rates = [s.kbps_in for s in samples]
    lats = [s.latency_ms for s in samples if s.latency_ms is not None]
    avg = sum(rates) / len(rates)
    # summation rounding can push a mean of equal values past min/max
    avg = min(max(avg, min(rates)), max(rates))
    avg_lat = sum(lats) / len(lats) if lats else None
    if lats:
        avg_lat = min(max(avg_lat, min(lats)), max(lats))
    return WindowStats(start_s, end_s, avg, avg_lat, len(samples))


def within_band(prev: WindowStats, curr: WindowStats, rel_threshold: float) -> bool:
    return abs(curr.avg_kbps_in - prev.avg_kbps_in) <= rel_threshold * prev.avg_kbps_in


class FluctuationTracker:
    """
    Classifies each window against the last accepted level.

    A window outside the band around the previous one opens a one-window
    probation and is reported `transient`. The next window decides: back in
    the band around the pre-deviation level is still `transient` (the dip
    reversed); still outside it is `shifted`. The first window seen is
    `shifted` since there is no level to hold.
    """

    def __init__(self, rel_threshold: float = 0.15):
        if not 0 < rel_threshold < 1:
            raise ValueError("rel_threshold must be in (0, 1)")
        self.rel_threshold = rel_threshold
        self._reference: Optional[WindowStats] = None
        self._pending = False

    def classify(self, curr: WindowStats) -> Fluctuation:
        ref = self._reference
        if ref is None:
            self._reference = curr
            return Fluctuation.SHIFTED
        in_band = within_band(ref, curr, self.rel_threshold)
        if self._pending:
            self._pending = False
            self._reference = curr
            return Fluctuation.TRANSIENT if in_band else Fluctuation.SHIFTED
        if in_band:
            self._reference = curr
            return Fluctuation.STABLE
        self._pending = True
        return Fluctuation.TRANSIENT


def classify_fluctuation(
    prev: WindowStats,
    curr: WindowStats,
    rel_threshold: float = 0.15,
    tracker: Optional[FluctuationTracker] = None,
) -> Fluctuation:
    """
    One-shot classification of `curr` after `prev`. Pass a tracker to carry
    probation state across calls; `prev` primes a fresh tracker.
    """
    if tracker is None:
        tracker = FluctuationTracker(rel_threshold)
    if tracker._reference is None:
        tracker.classify(prev)
    return tracker.classify(curr)
