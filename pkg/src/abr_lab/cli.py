"""abr-lab command line: run, compare, probe, replay, mock-advisor."""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from typing import Optional

from .mock_advisor import Behavior, MockAdvisorServer, load_fixtures
from .model import StreamConfig, default_ladder, kbits_to_bytes, read_ladder_csv, read_trace_csv
from .policy import AdvisorPolicy, FixedPolicy, HttpAdvisorClient, RulePolicy, RulePolicyConfig
from .probe import HttpProber, LiveProbe, ProbeConfig, PsutilCounterSource
from .session import Override, SessionConfig, replay_decisions, run_session
from .sim import compute_qoe
from .telemetry import DecisionLog, MetricsLog, emit_report, read_metrics_csv, write_events_csv, write_report_json

logger = logging.getLogger("abr_lab")


def _add_policy_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ladder", help="ladder CSV (label,height,nominal_bitrate_kbps,selection_threshold_kbps)")
    p.add_argument("--advisor-url", help="advisor endpoint; default starts the bundled mock")
    p.add_argument("--advisor-timeout-ms", type=float, default=1000.0)
    p.add_argument("--window", type=float, default=3.0, help="averaging window in seconds")
    p.add_argument("--fluct-threshold", type=float, default=0.15)
    p.add_argument("--no-averaging", action="store_true", help="decide on every sample")
    p.add_argument("--interval", type=float, default=1.0, help="sampling period in seconds")
    p.add_argument("--latency-threshold-ms", type=float, default=100.0)
    p.add_argument("--base-buffer-s", type=float, default=2.0)
    p.add_argument("--buffer-growth", type=float, default=1.0, help="buffer seconds per 100 ms of excess latency")
    p.add_argument("--max-buffer-s", type=float, default=10.0)


def _add_session_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--trace", required=True, help="trace CSV (t_s,bandwidth_kbps,latency_ms)")
    p.add_argument("--duration", type=float, help="session seconds (default: whole trace)")
    p.add_argument("--segment", type=float, default=1.0, help="segment duration in seconds")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="abr-lab", description="Trace-driven adaptive streaming control lab.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate one session")
    _add_session_args(run)
    _add_policy_args(run)
    run.add_argument("--policy", default="rule", help="rule | advisor | no-averaging | fixed:<label>")
    run.add_argument("--override", action="append", default=[], metavar="T:LABEL", help="user resolution change")
    run.add_argument("--out", "--report", dest="report", help="report JSON path")
    run.add_argument("--log", help="metrics CSV path")
    run.add_argument("--decisions-log", help="decision CSV path")
    run.add_argument("--events", help="playback event CSV path")

    cmp_ = sub.add_parser("compare", help="run several policies on one trace")
    _add_session_args(cmp_)
    _add_policy_args(cmp_)
    cmp_.add_argument("--policies", default="rule,advisor,no-averaging")
    cmp_.add_argument("--out", required=True, help="comparison CSV path")
    cmp_.add_argument("--emit", choices=["table", "chart-data"], default="table")
    cmp_.add_argument("--chart-dir", help="directory for chart-data series (default: next to --out)")

    probe = sub.add_parser("probe", help="sample live interface counters and round-trip latency")
    probe.add_argument("--interval", type=float, default=1.0)
    probe.add_argument("--duration", type=float, default=60.0)
    probe.add_argument("--latency-target", help="URL timed for latency")
    probe.add_argument("--latency-timeout-ms", type=float, default=2000.0)
    probe.add_argument("--interface", help="network interface (default: all)")
    probe.add_argument("--log", help="metrics CSV path (default: stdout)")

    rep = sub.add_parser("replay", help="re-decide over a recorded metrics log")
    rep.add_argument("--log", required=True, help="metrics CSV to replay")
    _add_policy_args(rep)
    rep.add_argument("--policy", default="rule")
    rep.add_argument("--decisions-log", help="decision CSV path (default: stdout)")

    mock = sub.add_parser("mock-advisor", help="serve the advisor protocol from fixtures")
    mock.add_argument("--fixtures", help="fixture JSON (default: bundled)")
    mock.add_argument("--host", default="127.0.0.1")
    mock.add_argument("--port", type=int, default=8765)
    mock.add_argument("--behavior", default="normal", help="normal | delay:<ms> | drop | malformed")
    return ap


def _ladder(args):
    return read_ladder_csv(args.ladder) if args.ladder else default_ladder()


def _rule_config(args, ladder) -> RulePolicyConfig:
    return RulePolicyConfig(
        ladder=ladder,
        latency_threshold_ms=args.latency_threshold_ms,
        base_buffer_s=args.base_buffer_s,
        buffer_growth_per_100ms=args.buffer_growth,
        buffer_bounds_s=(min(2.0, args.base_buffer_s), args.max_buffer_s),
    )


def _session_config(args, ladder, duration, averaging) -> SessionConfig:
    return SessionConfig(
        duration_s=duration,
        ladder=ladder,
        interval_s=args.interval,
        window_s=args.window,
        fluct_threshold=args.fluct_threshold,
        averaging=averaging,
        segment_duration_s=getattr(args, "segment", 1.0),
        base_buffer_s=args.base_buffer_s,
    )


def build_policy(name: str, rules: RulePolicyConfig, advisor_url: Optional[str], timeout_ms: float, stack):
    """Return (policy, averaging). Starts the bundled mock advisor on `stack` if needed."""
    if name == "rule":
        return RulePolicy(rules), True
    if name == "no-averaging":
        return RulePolicy(rules), False
    if name == "advisor":
        if advisor_url is None:
            server = stack.enter_context(MockAdvisorServer(load_fixtures()))
            advisor_url = server.url
            logger.info("started bundled mock advisor at %s", advisor_url)
        return AdvisorPolicy(HttpAdvisorClient(advisor_url), rules, timeout_ms), True
    if name.startswith("fixed:"):
        res = rules.ladder.by_label(name.split(":", 1)[1])
        buf = round(kbits_to_bytes(rules.base_buffer_s * res.nominal_bitrate_kbps))
        return FixedPolicy(StreamConfig(res, buf)), True
    raise ValueError(f"unknown policy {name!r}")


def _summary(name: str, report) -> dict:
    return {
        "policy": name,
        "stall_count": report.stall_count,
        "total_stall_s": round(report.total_stall_s, 3),
        "rebuffer_ratio": round(report.rebuffer_ratio, 4),
        "switch_count": report.switch_count,
        "avg_height": round(report.time_weighted_avg_height, 1),
        "qoe": round(compute_qoe(report), 4),
    }


def cmd_run(args) -> int:
    ladder = _ladder(args)
    trace = read_trace_csv(args.trace)
    duration = args.duration or trace.duration_s
    overrides = [Override.parse(o) for o in args.override]
    with contextlib.ExitStack() as stack:
        policy, averaging = build_policy(
            args.policy, _rule_config(args, ladder), args.advisor_url, args.advisor_timeout_ms, stack
        )
        averaging = averaging and not args.no_averaging
        cfg = _session_config(args, ladder, duration, averaging)
        mlog = stack.enter_context(MetricsLog(args.log)) if args.log else None
        dlog = stack.enter_context(DecisionLog(args.decisions_log)) if args.decisions_log else None
        events: Optional[list] = [] if args.events else None
        report = run_session(trace, policy, cfg, overrides, mlog, dlog, events)
    if args.report:
        write_report_json(report, args.report)
    if args.events:
        write_events_csv(events, args.events)
    print(json.dumps(_summary(args.policy, report)))
    return 0


def cmd_compare(args) -> int:
    ladder = _ladder(args)
    trace = read_trace_csv(args.trace)
    duration = args.duration or trace.duration_s
    reports = {}
    with contextlib.ExitStack() as stack:
        for name in [p.strip() for p in args.policies.split(",") if p.strip()]:
            policy, averaging = build_policy(
                name, _rule_config(args, ladder), args.advisor_url, args.advisor_timeout_ms, stack
            )
            cfg = _session_config(args, ladder, duration, averaging and not args.no_averaging)
            reports[name] = run_session(trace, policy, cfg)
    emit_report(reports, args.out, args.emit, args.chart_dir)
    for name, r in reports.items():
        print(json.dumps(_summary(name, r)))
    return 0


def cmd_probe(args) -> int:
    cfg = ProbeConfig(args.interval, args.latency_timeout_ms)
    prober = HttpProber(args.latency_target) if args.latency_target else None
    probe = LiveProbe(PsutilCounterSource(args.interface), prober, cfg)
    with contextlib.ExitStack() as stack:
        sink = MetricsLog(args.log) if args.log else MetricsLog(sys.stdout)
        stack.callback(sink.close)
        try:
            for s in probe.samples(args.duration):
                sink.log_sample(s)
        except KeyboardInterrupt:
            pass
    return 0


def cmd_replay(args) -> int:
    ladder = _ladder(args)
    samples = read_metrics_csv(args.log)
    if not samples:
        raise ValueError(f"{args.log} has no samples")
    with contextlib.ExitStack() as stack:
        policy, averaging = build_policy(
            args.policy, _rule_config(args, ladder), args.advisor_url, args.advisor_timeout_ms, stack
        )
        cfg = _session_config(args, ladder, samples[-1].timestamp + args.interval, averaging and not args.no_averaging)
        dlog = DecisionLog(args.decisions_log) if args.decisions_log else DecisionLog(sys.stdout)
        stack.callback(dlog.close)
        replay_decisions(samples, policy, cfg, dlog)
    return 0


def cmd_mock_advisor(args) -> int:
    server = MockAdvisorServer(load_fixtures(args.fixtures), Behavior.parse(args.behavior), args.host, args.port)
    print(f"mock advisor listening on {server.url} ({args.behavior})", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


COMMANDS = {
    "run": cmd_run,
    "compare": cmd_compare,
    "probe": cmd_probe,
    "replay": cmd_replay,
    "mock-advisor": cmd_mock_advisor,
}


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:
        print(f"abr-lab: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
