"""
Shared value types: resolution ladder, network samples, window statistics,
decisions and bandwidth traces.

All rates are kilobits/second, all times seconds, all buffer sizes bytes
unless a field name says otherwise.
"""

from __future__ import annotations

import contextlib
import csv
import io
from bisect import bisect_right
from dataclasses import asdict, dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

PathLike = Union[str, Path]

BITS_PER_BYTE = 8
KILO = 1000


def bytes_to_kbits(n_bytes: float) -> float:
    return n_bytes * BITS_PER_BYTE / KILO


def kbits_to_bytes(kbits: float) -> float:
    return kbits * KILO / BITS_PER_BYTE


@dataclass(frozen=True)
class Resolution:
    label: str
    height: int
    nominal_bitrate_kbps: float

    def __post_init__(self):
        if self.height <= 0:
            raise ValueError(f"height must be positive, got {self.height}")
        if self.nominal_bitrate_kbps <= 0:
            raise ValueError(f"nominal bitrate must be positive, got {self.nominal_bitrate_kbps}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Resolution":
        return cls(d["label"], int(d["height"]), d["nominal_bitrate_kbps"])


@dataclass(frozen=True)
class BitrateLadder:
    """Ordered rungs (lowest first) with the minimum average rate that selects each."""

    rungs: tuple[Resolution, ...]
    selection_threshold_kbps: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "rungs", tuple(self.rungs))
        object.__setattr__(self, "selection_threshold_kbps", tuple(self.selection_threshold_kbps))
        rungs, thr = self.rungs, self.selection_threshold_kbps
        if not rungs:
            raise ValueError("ladder needs at least one rung")
        if len(thr) != len(rungs):
            raise ValueError("one selection threshold per rung required")
        if thr[0] != 0:
            raise ValueError("lowest rung threshold must be exactly 0")
        if len({r.label for r in rungs}) != len(rungs):
            raise ValueError("rung labels must be unique")
        for i in range(1, len(rungs)):
            lo, hi = rungs[i - 1], rungs[i]
            if hi.height <= lo.height:
                raise ValueError(f"height must strictly increase ({lo.label} -> {hi.label})")
            if hi.nominal_bitrate_kbps <= lo.nominal_bitrate_kbps:
                raise ValueError(f"nominal bitrate must strictly increase ({lo.label} -> {hi.label})")
            if thr[i] < thr[i - 1]:
                raise ValueError(f"thresholds must be non-decreasing ({lo.label} -> {hi.label})")
            if hi.nominal_bitrate_kbps > thr[i]:
                raise ValueError(f"{hi.label}: nominal bitrate exceeds its selection threshold")

    @property
    def labels(self) -> list[str]:
        return [r.label for r in self.rungs]

    @property
    def lowest(self) -> Resolution:
        return self.rungs[0]

    def by_label(self, label: str) -> Resolution:
        for r in self.rungs:
            if r.label == label:
                return r
        raise KeyError(f"resolution {label!r} not in ladder {self.labels}")

    def index(self, resolution: Resolution) -> int:
        return self.rungs.index(resolution)

    def __contains__(self, item) -> bool:
        if isinstance(item, str):
            return item in self.labels
        return item in self.rungs

    def to_dict(self) -> dict:
        return {
            "rungs": [r.to_dict() for r in self.rungs],
            "selection_threshold_kbps": list(self.selection_threshold_kbps),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BitrateLadder":
        return cls(tuple(Resolution.from_dict(r) for r in d["rungs"]), tuple(d["selection_threshold_kbps"]))


def ladder_lookup(ladder: BitrateLadder, avg_kbps: float) -> Resolution:
    """Highest rung whose selection threshold is <= avg_kbps (boundary inclusive)."""
    idx = bisect_right(ladder.selection_threshold_kbps, avg_kbps) - 1
    return ladder.rungs[max(idx, 0)]


LADDER_FIELDS = ["label", "height", "nominal_bitrate_kbps", "selection_threshold_kbps"]


def _num(text: str) -> float:
    value = float(text)
    return int(value) if value.is_integer() and "." not in text else value


def read_ladder_csv(source: Union[PathLike, io.TextIOBase]) -> BitrateLadder:
    with _open_text(source) as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != LADDER_FIELDS:
            raise ValueError(f"ladder CSV header must be {','.join(LADDER_FIELDS)}, got {reader.fieldnames}")
        rungs, thresholds = [], []
        for row in reader:
            rungs.append(Resolution(row["label"], int(row["height"]), _num(row["nominal_bitrate_kbps"])))
            thresholds.append(_num(row["selection_threshold_kbps"]))
    return BitrateLadder(tuple(rungs), tuple(thresholds))


def write_ladder_csv(ladder: BitrateLadder, path: PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(LADDER_FIELDS)
        for r, thr in zip(ladder.rungs, ladder.selection_threshold_kbps):
            w.writerow([r.label, r.height, r.nominal_bitrate_kbps, thr])


def default_ladder() -> BitrateLadder:
    text = resources.files("abr_lab").joinpath("data/default_ladder.csv").read_text(encoding="utf-8")
    return read_ladder_csv(io.StringIO(text))


@dataclass(frozen=True)
class NetworkSample:
    timestamp: float
    kbps_in: float
    kbps_out: float
    latency_ms: Optional[float] = None

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError("timestamp must be non-negative")
        if self.kbps_in < 0 or self.kbps_out < 0:
            raise ValueError("data rates must be non-negative")
        if self.latency_ms is not None and self.latency_ms <= 0:
            raise ValueError("latency must be positive when present")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSample":
        return cls(**d)


@dataclass(frozen=True)
class WindowStats:
    window_start_s: float
    window_end_s: float
    avg_kbps_in: float
    avg_latency_ms: Optional[float]
    sample_count: int

    def __post_init__(self):
        if self.window_end_s <= self.window_start_s:
            raise ValueError("window must have positive span")
        if self.sample_count < 1:
            raise ValueError("window needs at least one sample")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "WindowStats":
        return cls(**d)


@dataclass(frozen=True)
class StreamConfig:
    resolution: Resolution
    buffer_target_bytes: int

    def __post_init__(self):
        if not isinstance(self.buffer_target_bytes, int) or isinstance(self.buffer_target_bytes, bool):
            raise TypeError("buffer_target_bytes must be an int")
        if self.buffer_target_bytes <= 0:
            raise ValueError("buffer_target_bytes must be positive")

    @property
    def buffer_target_s(self) -> float:
        """Buffer target expressed in media-seconds at this config's nominal bitrate."""
        return bytes_to_kbits(self.buffer_target_bytes) / self.resolution.nominal_bitrate_kbps

    def with_resolution(self, resolution: Resolution) -> "StreamConfig":
        """Same buffer target in media-seconds, re-expressed in bytes for another rung."""
        if resolution == self.resolution:
            return self
        scaled = round(self.buffer_target_bytes * resolution.nominal_bitrate_kbps / self.resolution.nominal_bitrate_kbps)
        return StreamConfig(resolution, max(1, scaled))

    def to_dict(self) -> dict:
        return {"resolution": self.resolution.to_dict(), "buffer_target_bytes": self.buffer_target_bytes}

    @classmethod
    def from_dict(cls, d: dict) -> "StreamConfig":
        return cls(Resolution.from_dict(d["resolution"]), int(d["buffer_target_bytes"]))


class Source(str, Enum):
    RULE = "rule-based"
    ADVISOR = "advisor"
    ADVISOR_FALLBACK = "advisor-fallback"
    USER_OVERRIDE = "user-override"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Decision:
    config: StreamConfig
    source: Source
    reason: str
    decided_at_s: float

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "source": self.source.value,
            "reason": self.reason,
            "decided_at_s": self.decided_at_s,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Decision":
        return cls(StreamConfig.from_dict(d["config"]), Source(d["source"]), d["reason"], d["decided_at_s"])


@dataclass(frozen=True)
class TracePoint:
    t_s: float
    bandwidth_kbps: float
    latency_ms: float

    def __post_init__(self):
        if self.bandwidth_kbps < 0:
            raise ValueError("bandwidth must be non-negative")
        if self.latency_ms <= 0:
            raise ValueError("latency must be positive")


@dataclass(frozen=True)
class Trace:
    """
    Piecewise-constant network conditions. Point i holds from its t_s up to
    (not including) the next point's t_s; the last point holds to duration_s.
    """

    points: tuple[TracePoint, ...]
    duration_s: float
    _times: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        if not self.points:
            raise ValueError("trace needs at least one point")
        if self.points[0].t_s != 0:
            raise ValueError("first trace point must be at t_s = 0")
        times = tuple(p.t_s for p in self.points)
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("trace t_s must strictly increase")
        if self.duration_s < times[-1] or self.duration_s <= 0:
            raise ValueError("duration_s must be positive and cover every point")
        object.__setattr__(self, "_times", times)

    def index_at(self, t_s: float) -> int:
        return bisect_right(self._times, t_s) - 1

    def point_at(self, t_s: float) -> TracePoint:
        return self.points[max(self.index_at(t_s), 0)]

    def next_change_after(self, t_s: float) -> float:
        """Time of the first breakpoint strictly after t_s (inf if none)."""
        i = bisect_right(self._times, t_s)
        return self._times[i] if i < len(self._times) else float("inf")

    @classmethod
    def from_rows(cls, rows: Iterable[tuple[float, float, float]], duration_s: Optional[float] = None) -> "Trace":
        pts = tuple(TracePoint(*r) for r in rows)
        return cls(pts, pts[-1].t_s if duration_s is None else duration_s)


TRACE_FIELDS = ["t_s", "bandwidth_kbps", "latency_ms"]


def read_trace_csv(source: Union[PathLike, io.TextIOBase]) -> Trace:
    """Load a trace; the final row marks the end of the trace (duration_s = its t_s)."""
    with _open_text(source) as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != TRACE_FIELDS:
            raise ValueError(f"trace CSV header must be {','.join(TRACE_FIELDS)}, got {reader.fieldnames}")
        rows = [(float(r["t_s"]), float(r["bandwidth_kbps"]), float(r["latency_ms"])) for r in reader]
    if not rows:
        raise ValueError("trace CSV has no rows")
    return Trace.from_rows(rows)


def write_trace_csv(trace: Trace, path: PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(TRACE_FIELDS)
        for p in trace.points:
            w.writerow([repr(p.t_s), repr(p.bandwidth_kbps), repr(p.latency_ms)])
        if trace.duration_s > trace.points[-1].t_s:
            last = trace.points[-1]
            w.writerow([repr(trace.duration_s), repr(last.bandwidth_kbps), repr(last.latency_ms)])


def constant_trace(duration_s: float, bandwidth_kbps: float, latency_ms: float) -> Trace:
    return Trace((TracePoint(0.0, bandwidth_kbps, latency_ms),), duration_s)


def square_wave_trace(
    duration_s: float,
    low_kbps: float,
    high_kbps: float,
    period_s: float = 1.0,
    latency_ms: float = 20.0,
    start_low: bool = True,
) -> Trace:
    """Alternates low/high every period_s seconds."""
    n = int(round(duration_s / period_s))
    pts = []
    for i in range(n):
        low = (i % 2 == 0) == start_low
        pts.append(TracePoint(i * period_s, low_kbps if low else high_kbps, latency_ms))
    return Trace(tuple(pts), duration_s)


def piecewise_trace(segments: Sequence[tuple[float, float, float]], duration_s: float) -> Trace:
    """Build a trace from (start_s, bandwidth_kbps, latency_ms) segments."""
    return Trace(tuple(TracePoint(*s) for s in segments), duration_s)


def _open_text(source):
    if isinstance(source, (str, Path)):
        return open(source, newline="", encoding="utf-8")
    return contextlib.nullcontext(source)
