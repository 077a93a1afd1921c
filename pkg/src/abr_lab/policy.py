"""
Decision policies: WindowStats -> Decision.

RulePolicy picks the rung from the averaged inbound rate and grows the
buffer target when latency exceeds a threshold. AdvisorPolicy asks an
external advisor over HTTP/JSON and degrades to the rule policy on any
failure. Hysteresis sits after either and suppresses short-lived switches.
"""

from __future__ import annotations

import json
import logging
import socket
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import Optional, Protocol

from .aggregator import Fluctuation
from .model import (
    BitrateLadder,
    Decision,
    Source,
    StreamConfig,
    WindowStats,
    default_ladder,
    kbits_to_bytes,
    ladder_lookup,
)

logger = logging.getLogger(__name__)

HOLD = "hysteresis-hold"


@dataclass(frozen=True)
class RulePolicyConfig:
    ladder: BitrateLadder = field(default_factory=default_ladder)
    latency_threshold_ms: float = 100.0
    base_buffer_s: float = 2.0
    # seconds of buffer added per 100 ms of latency above the threshold
    buffer_growth_per_100ms: float = 1.0
    buffer_bounds_s: tuple[float, float] = (2.0, 10.0)

    def __post_init__(self):
        lo, hi = self.buffer_bounds_s
        if self.latency_threshold_ms <= 0 or self.base_buffer_s <= 0 or lo <= 0:
            raise ValueError("thresholds and buffer sizes must be positive")
        if self.buffer_growth_per_100ms < 0:
            raise ValueError("buffer growth must be non-negative")
        if not lo <= self.base_buffer_s <= hi:
            raise ValueError(f"base buffer {self.base_buffer_s}s outside bounds {self.buffer_bounds_s}")

    def initial_config(self) -> StreamConfig:
        """Lowest rung with the base buffer: what a session streams before its first window."""
        res = self.ladder.lowest
        return StreamConfig(res, round(kbits_to_bytes(self.base_buffer_s * res.nominal_bitrate_kbps)))


def buffer_seconds(cfg: RulePolicyConfig, avg_latency_ms: Optional[float]) -> float:
    if avg_latency_ms is None or avg_latency_ms <= cfg.latency_threshold_ms:
        return cfg.base_buffer_s
    excess = avg_latency_ms - cfg.latency_threshold_ms
    lo, hi = cfg.buffer_bounds_s
    return min(max(cfg.base_buffer_s + cfg.buffer_growth_per_100ms * excess / 100, lo), hi)


def rule_config(cfg: RulePolicyConfig, avg_kbps_in: float, avg_latency_ms: Optional[float]) -> tuple[StreamConfig, str]:
    res = ladder_lookup(cfg.ladder, avg_kbps_in)
    buf_s = buffer_seconds(cfg, avg_latency_ms)
    if avg_latency_ms is None:
        reason = "latency-absent"
    elif avg_latency_ms > cfg.latency_threshold_ms:
        reason = "latency-high"
    else:
        reason = "threshold-crossed"
    return StreamConfig(res, round(kbits_to_bytes(buf_s * res.nominal_bitrate_kbps))), reason


def rule_decide(cfg: RulePolicyConfig, stats: WindowStats) -> Decision:
    config, reason = rule_config(cfg, stats.avg_kbps_in, stats.avg_latency_ms)
    return Decision(config, Source.RULE, reason, stats.window_end_s)


# --- advisor wire protocol -------------------------------------------------


class AdvisorError(Exception):
    failure_class = "transport-error"


class AdvisorTimeout(AdvisorError):
    failure_class = "timeout"


class InvalidResponse(AdvisorError):
    failure_class = "invalid-response"


@dataclass(frozen=True)
class AdvisorRequest:
    avg_latency_ms: Optional[float]
    avg_kbps_in: float
    current_resolution_label: str
    current_buffer_bytes: int
    ladder_labels: tuple[str, ...]

    def to_wire(self) -> dict:
        return {
            "avg_latency_ms": self.avg_latency_ms,
            "avg_kbps_in": self.avg_kbps_in,
            "current_resolution": self.current_resolution_label,
            "current_buffer_bytes": self.current_buffer_bytes,
            "ladder": list(self.ladder_labels),
        }

    @classmethod
    def from_wire(cls, d: dict) -> "AdvisorRequest":
        try:
            lat = d["avg_latency_ms"]
            kbps = d["avg_kbps_in"]
            if lat is not None and not _is_number(lat):
                raise TypeError("avg_latency_ms")
            if not _is_number(kbps):
                raise TypeError("avg_kbps_in")
            ladder = d["ladder"]
            if not isinstance(ladder, list) or not all(isinstance(x, str) for x in ladder):
                raise TypeError("ladder")
            return cls(lat, kbps, str(d["current_resolution"]), int(d["current_buffer_bytes"]), tuple(ladder))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidResponse(f"malformed advisor request: {exc}") from exc


@dataclass(frozen=True)
class AdvisorResponse:
    resolution_label: str
    buffer_bytes: int

    def to_wire(self) -> dict:
        return {"resolution": self.resolution_label, "buffer_bytes": self.buffer_bytes}

    @classmethod
    def from_wire(cls, d) -> "AdvisorResponse":
        if not isinstance(d, dict):
            raise InvalidResponse("response is not a JSON object")
        label, buf = d.get("resolution"), d.get("buffer_bytes")
        if not isinstance(label, str):
            raise InvalidResponse(f"resolution must be a string, got {label!r}")
        if not isinstance(buf, int) or isinstance(buf, bool) or buf <= 0:
            raise InvalidResponse(f"buffer_bytes must be a positive integer, got {buf!r}")
        return cls(label, buf)

    def validate_for(self, req: AdvisorRequest) -> None:
        if self.resolution_label not in req.ladder_labels:
            raise InvalidResponse(f"resolution {self.resolution_label!r} not in ladder {list(req.ladder_labels)}")


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


class AdvisorTransport(Protocol):
    def advise(self, req: AdvisorRequest, timeout_s: float) -> AdvisorResponse: ...


class HttpAdvisorClient:
    """POSTs the JSON request to `url` and parses the JSON response."""

    def __init__(self, url: str):
        self.url = url

    def advise(self, req: AdvisorRequest, timeout_s: float) -> AdvisorResponse:
        body = json.dumps(req.to_wire()).encode()
        http_req = urllib.request.Request(
            self.url, data=body, method="POST", headers={"Content-Type": "application/json"}
        )
        try:
            with urllib.request.urlopen(http_req, timeout=timeout_s) as resp:
                raw = resp.read()
        except urllib.error.HTTPError as exc:
            raise AdvisorError(f"advisor HTTP {exc.code}") from exc
        except urllib.error.URLError as exc:
            if isinstance(exc.reason, (socket.timeout, TimeoutError)):
                raise AdvisorTimeout(str(exc.reason)) from exc
            raise AdvisorError(str(exc.reason)) from exc
        except (socket.timeout, TimeoutError) as exc:
            raise AdvisorTimeout(str(exc)) from exc
        except OSError as exc:
            raise AdvisorError(str(exc)) from exc
        try:
            payload = json.loads(raw)
        except (ValueError, UnicodeDecodeError) as exc:
            raise InvalidResponse(f"response is not JSON: {raw[:60]!r}") from exc
        return AdvisorResponse.from_wire(payload)


def advisor_decide(
    client: AdvisorTransport,
    req: AdvisorRequest,
    fallback: RulePolicyConfig,
    timeout_ms: float,
    decided_at_s: float = 0.0,
) -> Decision:
    """
    Consult the advisor; any timeout, transport error or invalid answer
    yields the rule policy's decision tagged advisor-fallback.
    """
    try:
        resp = client.advise(req, timeout_ms / 1000)
        resp.validate_for(req)
        resolution = fallback.ladder.by_label(resp.resolution_label)
    except (AdvisorError, KeyError) as exc:
        failure = getattr(exc, "failure_class", InvalidResponse.failure_class)
        logger.warning("advisor %s, falling back to rule policy: %s", failure, exc)
        config, _ = rule_config(fallback, req.avg_kbps_in, req.avg_latency_ms)
        return Decision(config, Source.ADVISOR_FALLBACK, failure, decided_at_s)
    return Decision(StreamConfig(resolution, resp.buffer_bytes), Source.ADVISOR, "advisor-recommendation", decided_at_s)


# --- policies -------------------------------------------------------------


class RulePolicy:
    name = "rule"

    def __init__(self, config: Optional[RulePolicyConfig] = None):
        self.config = config or RulePolicyConfig()

    def decide(self, stats: WindowStats, current: StreamConfig) -> Decision:
        return rule_decide(self.config, stats)


class AdvisorPolicy:
    name = "advisor"

    def __init__(self, client: AdvisorTransport, config: Optional[RulePolicyConfig] = None, timeout_ms: float = 1000.0):
        self.client = client
        self.config = config or RulePolicyConfig()
        self.timeout_ms = timeout_ms

    def request_for(self, stats: WindowStats, current: StreamConfig) -> AdvisorRequest:
        return AdvisorRequest(
            stats.avg_latency_ms,
            stats.avg_kbps_in,
            current.resolution.label,
            current.buffer_target_bytes,
            tuple(self.config.ladder.labels),
        )

    def decide(self, stats: WindowStats, current: StreamConfig) -> Decision:
        req = self.request_for(stats, current)
        return advisor_decide(self.client, req, self.config, self.timeout_ms, stats.window_end_s)


class FixedPolicy:
    """Always the same config; a baseline for comparisons."""

    def __init__(self, config: StreamConfig):
        self.config = config
        self.name = f"fixed:{config.resolution.label}"

    def decide(self, stats: WindowStats, current: StreamConfig) -> Decision:
        return Decision(self.config, Source.RULE, "fixed-config", stats.window_end_s)


class Hysteresis:
    """
    Holds the applied resolution through transient dips.

    A candidate rung passes when the window is `shifted`, or when it is
    `stable` and the same rung was already the candidate last window.
    Held decisions keep the current rung but take the candidate's buffer
    target (rescaled to the held rung in media-seconds).
    """

    def __init__(self, current: StreamConfig):
        self.current = current
        self._last_candidate = None

    def filter(self, candidate: Decision, fluct: Fluctuation) -> Decision:
        res = candidate.config.resolution
        sustained = self._last_candidate == res
        self._last_candidate = res
        if (
            res == self.current.resolution
            or fluct is Fluctuation.SHIFTED
            or (fluct is Fluctuation.STABLE and sustained)
        ):
            out = candidate
        else:
            held = candidate.config.with_resolution(self.current.resolution)
            out = Decision(held, candidate.source, HOLD, candidate.decided_at_s)
        self.current = out.config
        return out


def hysteresis_filter(state: Hysteresis, candidate: Decision, fluct: Fluctuation) -> Decision:
    return state.filter(candidate, fluct)
