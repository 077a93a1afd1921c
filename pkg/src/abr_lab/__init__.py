"""Trace-driven adaptive video streaming control lab."""

from .aggregator import Fluctuation, FluctuationTracker, TumblingWindow, classify_fluctuation, push_sample
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
    default_ladder,
    ladder_lookup,
)
from .policy import AdvisorPolicy, FixedPolicy, Hysteresis, RulePolicy, RulePolicyConfig, advisor_decide, rule_decide
from .session import Override, SessionConfig, run_session
from .sim import SessionReport, SimConfig, compute_qoe, simulate

__version__ = "0.1.0"
