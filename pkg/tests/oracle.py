"""
Brute-force 1 ms fixed-step playback model used as an independent check on
the event-driven simulator. Shares nothing with abr_lab.sim: plain tuples
in, plain dict out, its own step-function lookup and unit conversions.

Step k covers [k, k+1) ms. Order within a step:
  1. if no segment in flight: apply every decision with decided_at <= t,
     then start a segment if buffer < target
  2. if not playing and buffer >= resume threshold: (re)start playback
  3. download bandwidth(t) * 1 ms worth of bytes, drain 1 ms if playing
  4. finish the segment if its bytes are in; stall if playing and empty
"""

from __future__ import annotations


def run_oracle(
    trace_points,
    session_ms: int,
    decisions,
    ladder_kbps: dict,
    initial: tuple,
    segment_ms: int = 1000,
    startup_ms: float = 2000.0,
):
    """
    trace_points: [(t_s, kbps), ...] first at 0, step function.
    decisions: [(decided_at_s, label, buffer_bytes), ...] time-ordered.
    ladder_kbps: label -> nominal kbps.
    initial: (label, buffer_bytes).
    """
    # bytes delivered during each millisecond
    per_ms = [0.0] * session_ms
    times = [p[0] for p in trace_points] + [float("inf")]
    for i, (t0, kbps) in enumerate(trace_points):
        a = int(round(t0 * 1000))
        b = session_ms if times[i + 1] == float("inf") else int(round(times[i + 1] * 1000))
        a, b = min(a, session_ms), min(b, session_ms)
        per_ms[a:b] = [kbps * 1000.0 / 8.0 / 1000.0] * (b - a)

    def target_ms(label, nbytes):
        return nbytes * 8.0 / 1000.0 / ladder_kbps[label] * 1000.0

    label, nbytes = initial
    tgt = target_ms(label, nbytes)
    threshold = min(startup_ms, tgt)
    pending = list(decisions)
    p_idx = 0

    buffer_ms = 0
    playing = False
    started = False
    in_flight = None  # remaining bytes
    seg_bytes = 0
    total_bytes = 0
    stall_count = 0
    stall_ms = 0
    startup_done_ms = None
    stalled = False

    for k in range(session_ms):
        t = k / 1000.0
        if in_flight is None:
            changed = False
            while p_idx < len(pending) and pending[p_idx][0] <= t + 1e-12:
                _, label, nbytes = pending[p_idx]
                p_idx += 1
                changed = True
            if changed:
                tgt = target_ms(label, nbytes)
                threshold = tgt
            if buffer_ms < tgt:
                seg_bytes = int(round(ladder_kbps[label] * 1000.0 / 8.0 * segment_ms / 1000.0))
                in_flight = float(seg_bytes)
        if not playing and buffer_ms >= min(threshold, tgt) - 1e-9:
            playing = True
            if not started:
                started = True
                startup_done_ms = k
            stalled = False
        if in_flight is not None:
            in_flight -= per_ms[k]
        if playing:
            buffer_ms -= 1
        elif stalled:
            stall_ms += 1
        if in_flight is not None and in_flight <= 1e-6:
            buffer_ms += segment_ms
            total_bytes += seg_bytes
            in_flight = None
        if playing and buffer_ms <= 0:
            buffer_ms = 0
            playing = False
            stalled = True
            stall_count += 1

    return {
        "stall_count": stall_count,
        "total_stall_s": stall_ms / 1000.0,
        "startup_s": (startup_done_ms if startup_done_ms is not None else session_ms) / 1000.0,
        "bytes_downloaded": total_bytes,
    }
