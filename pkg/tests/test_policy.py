import time

import pytest
from hypothesis import given, settings, strategies as st

from abr_lab.aggregator import Fluctuation
from abr_lab.mock_advisor import FixtureTable
from abr_lab.model import Decision, Source, StreamConfig, WindowStats, default_ladder
from abr_lab.policy import (
    AdvisorError,
    AdvisorPolicy,
    AdvisorRequest,
    AdvisorResponse,
    AdvisorTimeout,
    FixedPolicy,
    HttpAdvisorClient,
    Hysteresis,
    InvalidResponse,
    RulePolicy,
    RulePolicyConfig,
    advisor_decide,
    buffer_seconds,
    hysteresis_filter,
    rule_config,
    rule_decide,
)

LADDER = default_ladder()
CFG = RulePolicyConfig(LADDER)


def window(kbps, lat, end=3.0):
    return WindowStats(end - 3.0, end, kbps, lat, 3)


def cfg_of(label, buf):
    return StreamConfig(LADDER.by_label(label), buf)


class TestRulePolicy:
    def test_good_link(self):
        d = rule_decide(CFG, window(1200, 20))
        assert d.config == cfg_of("1080p", 250_000)
        assert d.source is Source.RULE and d.reason == "threshold-crossed"
        assert d.decided_at_s == 3.0

    def test_high_latency_grows_buffer(self):
        d = rule_decide(CFG, window(1200, 145))
        assert d.config == cfg_of("1080p", 306_250)
        assert d.reason == "latency-high"

    def test_no_data(self):
        d = rule_decide(CFG, window(0, None))
        assert d.config == cfg_of("240p", 50_000)
        assert d.reason == "latency-absent"

    def test_buffer_clamped(self):
        assert buffer_seconds(CFG, 5000) == 10.0

    def test_initial_config_is_lowest_rung(self):
        assert CFG.initial_config() == cfg_of("240p", 50_000)

    @pytest.mark.parametrize(
        "kw",
        [
            {"base_buffer_s": 0},
            {"buffer_growth_per_100ms": -1},
            {"buffer_bounds_s": (5, 2)},
            {"latency_threshold_ms": -1},
        ],
    )
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            RulePolicyConfig(LADDER, **kw)

    @given(st.floats(0, 20000), st.floats(1, 5000), st.floats(1, 5000))
    def test_resolution_ignores_latency(self, kbps, l1, l2):
        assert rule_config(CFG, kbps, l1)[0].resolution == rule_config(CFG, kbps, l2)[0].resolution

    @given(st.floats(0, 20000), st.floats(0, 20000), st.one_of(st.none(), st.floats(1, 5000)))
    def test_resolution_monotone_in_rate(self, a, b, lat):
        lo, hi = sorted((a, b))
        r_lo = rule_config(CFG, lo, lat)[0].resolution
        r_hi = rule_config(CFG, hi, lat)[0].resolution
        assert LADDER.index(r_lo) <= LADDER.index(r_hi)

    @given(st.floats(1, 100))
    def test_buffer_constant_up_to_threshold(self, lat):
        assert buffer_seconds(CFG, lat) == CFG.base_buffer_s

    @given(st.floats(1, 5000), st.floats(1, 5000))
    def test_buffer_non_decreasing_in_latency(self, a, b):
        lo, hi = sorted((a, b))
        assert buffer_seconds(CFG, lo) <= buffer_seconds(CFG, hi)

    @given(st.floats(0, 20000), st.one_of(st.none(), st.floats(1, 5000)))
    def test_buffer_within_bounds(self, kbps, lat):
        s = buffer_seconds(CFG, lat)
        assert 2.0 <= s <= 10.0
        config, _ = rule_config(CFG, kbps, lat)
        assert config.buffer_target_bytes == round(s * config.resolution.nominal_bitrate_kbps * 125)


LOSSY_REQ = AdvisorRequest(1347.11, 1314.9825, "240p", 50_000, tuple(LADDER.labels))


class RaisingTransport:
    def __init__(self, exc):
        self.exc = exc

    def advise(self, req, timeout_s):
        raise self.exc


class CannedTransport:
    def __init__(self, resp):
        self.resp = resp

    def advise(self, req, timeout_s):
        return self.resp


class TestAdvisor:
    def test_high_latency_recommendation(self, mock_advisor):
        srv = mock_advisor("normal")
        d = advisor_decide(HttpAdvisorClient(srv.url), LOSSY_REQ, CFG, 1000, 3.0)
        assert d.config == cfg_of("1080p", 1_355_984)
        assert d.source is Source.ADVISOR and d.reason == "advisor-recommendation"
        assert srv.requests == [LOSSY_REQ]

    def test_drop_falls_back_within_timeout(self, mock_advisor):
        srv = mock_advisor("drop")
        start = time.perf_counter()
        d = advisor_decide(HttpAdvisorClient(srv.url), LOSSY_REQ, CFG, 200, 3.0)
        elapsed = time.perf_counter() - start
        assert d.source is Source.ADVISOR_FALLBACK and d.reason == "timeout"
        rule = rule_decide(CFG, window(1314.9825, 1347.11))
        assert d.config == rule.config and d.decided_at_s == rule.decided_at_s
        assert elapsed < 0.2 + 0.1

    def test_slow_advisor_counts_as_timeout(self, mock_advisor):
        srv = mock_advisor("delay:400")
        d = advisor_decide(HttpAdvisorClient(srv.url), LOSSY_REQ, CFG, 100)
        assert d.reason == "timeout"

    def test_malformed(self, mock_advisor):
        srv = mock_advisor("malformed")
        d = advisor_decide(HttpAdvisorClient(srv.url), LOSSY_REQ, CFG, 1000)
        assert d.source is Source.ADVISOR_FALLBACK and d.reason == "invalid-response"

    def test_unknown_resolution(self, mock_advisor):
        table = FixtureTable((), AdvisorResponse("9999p", 100_000))
        srv = mock_advisor("normal", fixtures=table)
        d = advisor_decide(HttpAdvisorClient(srv.url), LOSSY_REQ, CFG, 1000)
        assert d.source is Source.ADVISOR_FALLBACK and d.reason == "invalid-response"
        assert d.config == rule_config(CFG, 1314.9825, 1347.11)[0]

    def test_unreachable(self, closed_port_url):
        d = advisor_decide(HttpAdvisorClient(closed_port_url), LOSSY_REQ, CFG, 500)
        assert d.source is Source.ADVISOR_FALLBACK and d.reason == "transport-error"

    @pytest.mark.parametrize(
        "payload",
        [[], {"resolution": 5, "buffer_bytes": 10}, {"resolution": "480p", "buffer_bytes": 0}, {"resolution": "480p", "buffer_bytes": 1.5}, {"resolution": "480p"}],
    )
    def test_response_schema(self, payload):
        with pytest.raises(InvalidResponse):
            AdvisorResponse.from_wire(payload)

    def test_request_wire_round_trip(self):
        wire = LOSSY_REQ.to_wire()
        assert set(wire) == {"avg_latency_ms", "avg_kbps_in", "current_resolution", "current_buffer_bytes", "ladder"}
        assert AdvisorRequest.from_wire(wire) == LOSSY_REQ

    @settings(max_examples=50)
    @given(
        st.floats(0, 20000),
        st.one_of(st.none(), st.floats(1, 5000)),
        st.sampled_from([AdvisorError("refused"), AdvisorTimeout("slow"), InvalidResponse("junk")]),
    )
    def test_fallback_equals_rule(self, kbps, lat, exc):
        req = AdvisorRequest(lat, kbps, "240p", 50_000, tuple(LADDER.labels))
        d = advisor_decide(RaisingTransport(exc), req, CFG, 100, 9.0)
        assert d.config == rule_config(CFG, kbps, lat)[0]
        assert d.reason == exc.failure_class and d.decided_at_s == 9.0

    def test_advisor_buffer_not_clamped(self):
        d = advisor_decide(CannedTransport(AdvisorResponse("240p", 10**7)), LOSSY_REQ, CFG, 100)
        assert d.config.buffer_target_bytes == 10**7

    def test_policy_builds_request_from_window(self):
        pol = AdvisorPolicy(CannedTransport(AdvisorResponse("720p", 175_000)), CFG)
        current = cfg_of("240p", 50_000)
        assert pol.request_for(window(1314.9825, 1347.11), current) == LOSSY_REQ
        assert pol.decide(window(1314.9825, 1347.11, 6.0), current).decided_at_s == 6.0


class TestFixedAndRulePolicy:
    def test_fixed(self):
        pol = FixedPolicy(cfg_of("1080p", 250_000))
        assert pol.name == "fixed:1080p"
        assert pol.decide(window(0, None), cfg_of("240p", 50_000)).config == cfg_of("1080p", 250_000)

    def test_rule_policy(self):
        assert RulePolicy(CFG).decide(window(1200, 20), CFG.initial_config()) == rule_decide(CFG, window(1200, 20))


def cand(label, buf_s=2.0, t=3.0):
    r = LADDER.by_label(label)
    return Decision(StreamConfig(r, round(buf_s * r.nominal_bitrate_kbps * 125)), Source.RULE, "threshold-crossed", t)


class TestHysteresis:
    def test_shifted_passes(self):
        h = Hysteresis(cfg_of("240p", 50_000))
        assert h.filter(cand("1080p"), Fluctuation.SHIFTED) == cand("1080p")

    def test_transient_holds_with_rescaled_buffer(self):
        h = Hysteresis(cfg_of("1080p", 250_000))
        out = h.filter(cand("360p", 3.0), Fluctuation.TRANSIENT)
        assert out.config == cfg_of("1080p", 375_000)
        assert out.reason == "hysteresis-hold"

    def test_stable_needs_two_windows(self):
        h = Hysteresis(cfg_of("720p", 175_000))
        first = hysteresis_filter(h, cand("1080p"), Fluctuation.STABLE)
        second = hysteresis_filter(h, cand("1080p"), Fluctuation.STABLE)
        assert first.config.resolution.label == "720p"
        assert second.config.resolution.label == "1080p"

    def test_same_rung_passes(self):
        h = Hysteresis(cfg_of("720p", 175_000))
        assert h.filter(cand("720p", 4.0), Fluctuation.TRANSIENT) == cand("720p", 4.0)

    @given(st.lists(st.tuples(st.sampled_from(LADDER.labels), st.sampled_from(list(Fluctuation))), max_size=40))
    def test_transient_never_switches(self, steps):
        h = Hysteresis(cfg_of("240p", 50_000))
        for label, fl in steps:
            before = h.current.resolution
            out = h.filter(cand(label), fl)
            if fl is Fluctuation.TRANSIENT:
                assert out.config.resolution == before
            if fl is Fluctuation.SHIFTED:
                assert out.config.resolution.label == label
            assert out.config.buffer_target_s == pytest.approx(2.0, abs=1e-3)
