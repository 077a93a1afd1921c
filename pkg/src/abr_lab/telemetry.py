"""
CSV logging of samples and decisions, report serialization and
policy-comparison tables.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Iterable, Mapping, Optional, Union

from .model import BitrateLadder, Decision, NetworkSample, Source, StreamConfig
from .sim import SessionReport, compute_qoe

PathLike = Union[str, Path]

METRICS_FIELDS = ["t_s", "latency_ms", "kbps_in", "kbps_out"]
DECISION_FIELDS = ["t_s", "source", "resolution", "buffer_bytes", "reason"]
EVENT_FIELDS = ["t_s", "event", "detail"]
COMPARISON_FIELDS = ["policy", "stall_count", "total_stall_s", "rebuffer_ratio", "switch_count", "avg_height", "qoe"]


class IoError(OSError):
    pass


def fmt2(x: Optional[float]) -> str:
    return "" if x is None else f"{x:.2f}"


class _CsvSink:
    fields: list[str] = []

    def __init__(self, target: Union[PathLike, io.TextIOBase]):
        if isinstance(target, (str, Path)):
            try:
                self._f = open(target, "w", newline="", encoding="utf-8")
            except OSError as exc:
                raise IoError(f"cannot open {target}: {exc}") from exc
            self._owned = True
        else:
            self._f = target
            self._owned = False
        self._w = csv.writer(self._f, lineterminator="\n")
        self.rows = 0
        self.closed = False
        self._write(self.fields)

    def _write(self, row: list) -> None:
        if self.closed:
            raise IoError("log is closed")
        try:
            self._w.writerow(row)
            self._f.flush()
        except (OSError, ValueError) as exc:
            raise IoError(f"write failed: {exc}") from exc

    def close(self) -> None:
        if not self.closed and self._owned:
            self._f.close()
        self.closed = True

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


class MetricsLog(_CsvSink):
    """`t_s,latency_ms,kbps_in,kbps_out`, two decimals, flushed per row."""

    fields = METRICS_FIELDS

    def log_sample(self, s: NetworkSample) -> None:
        self._write([fmt2(s.timestamp), fmt2(s.latency_ms), fmt2(s.kbps_in), fmt2(s.kbps_out)])
        self.rows += 1


class DecisionLog(_CsvSink):
    fields = DECISION_FIELDS

    def log_decision(self, d: Decision) -> None:
        self._write([fmt2(d.decided_at_s), d.source.value, d.config.resolution.label, d.config.buffer_target_bytes, d.reason])
        self.rows += 1


def log_sample(sink: MetricsLog, s: NetworkSample) -> None:
    sink.log_sample(s)


def read_metrics_csv(path: PathLike) -> list[NetworkSample]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != METRICS_FIELDS:
            raise ValueError(f"metrics CSV header must be {','.join(METRICS_FIELDS)}, got {reader.fieldnames}")
        return [
            NetworkSample(
                float(r["t_s"]),
                float(r["kbps_in"]),
                float(r["kbps_out"]),
                float(r["latency_ms"]) if r["latency_ms"] else None,
            )
            for r in reader
        ]


def read_decisions_csv(path: PathLike, ladder: BitrateLadder) -> list[Decision]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != DECISION_FIELDS:
            raise ValueError(f"decision CSV header must be {','.join(DECISION_FIELDS)}, got {reader.fieldnames}")
        return [
            Decision(
                StreamConfig(ladder.by_label(r["resolution"]), int(r["buffer_bytes"])),
                Source(r["source"]),
                r["reason"],
                float(r["t_s"]),
            )
            for r in reader
        ]


def write_report_json(report: SessionReport, path: PathLike) -> None:
    try:
        Path(path).write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write report {path}: {exc}") from exc


def read_report_json(path: PathLike) -> SessionReport:
    return SessionReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def write_events_csv(events: Iterable[tuple], path: PathLike) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(EVENT_FIELDS)
            for t, kind, detail in events:
                w.writerow([f"{t:.6f}", kind, detail])
    except OSError as exc:
        raise IoError(f"cannot write events {path}: {exc}") from exc


def comparison_row(name: str, report: SessionReport) -> dict:
    return {
        "policy": name,
        "stall_count": report.stall_count,
        "total_stall_s": report.total_stall_s,
        "rebuffer_ratio": report.rebuffer_ratio,
        "switch_count": report.switch_count,
        "avg_height": report.time_weighted_avg_height,
        "qoe": compute_qoe(report),
    }


def write_comparison_csv(rows: Iterable[dict], target: Union[PathLike, io.TextIOBase]) -> None:
    """Floats are written with repr so the table parses back to identical values."""

    def dump(f):
        w = csv.writer(f, lineterminator="\n")
        w.writerow(COMPARISON_FIELDS)
        for r in rows:
            w.writerow([repr(r[k]) if isinstance(r[k], float) else r[k] for k in COMPARISON_FIELDS])

    if isinstance(target, (str, Path)):
        try:
            with open(target, "w", newline="", encoding="utf-8") as f:
                dump(f)
        except OSError as exc:
            raise IoError(f"cannot write {target}: {exc}") from exc
    else:
        dump(target)


def read_comparison_csv(source: Union[PathLike, io.TextIOBase]) -> list[dict]:
    def load(f):
        out = []
        for r in csv.DictReader(f):
            out.append(
                {
                    "policy": r["policy"],
                    "stall_count": int(r["stall_count"]),
                    "total_stall_s": float(r["total_stall_s"]),
                    "rebuffer_ratio": float(r["rebuffer_ratio"]),
                    "switch_count": int(r["switch_count"]),
                    "avg_height": float(r["avg_height"]),
                    "qoe": float(r["qoe"]),
                }
            )
        return out

    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as f:
            return load(f)
    return load(source)


def emit_report(
    reports: Mapping[str, SessionReport],
    out: PathLike,
    format: str = "table",
    chart_dir: Optional[PathLike] = None,
) -> list[Path]:
    """
    Write the comparison table to `out`. With format="chart-data", also
    write `<policy>.windows.csv` and `<policy>.decisions.csv` time series
    into chart_dir (defaults to out's directory).
    """
    if not reports:
        raise ValueError("need at least one report")
    if format not in ("table", "chart-data"):
        raise ValueError(f"unknown format {format!r}")
    out = Path(out)
    write_comparison_csv([comparison_row(name, r) for name, r in reports.items()], out)
    written = [out]
    if format == "chart-data":
        cdir = Path(chart_dir) if chart_dir is not None else out.parent
        cdir.mkdir(parents=True, exist_ok=True)
        for name, r in reports.items():
            stem = name.replace(":", "_").replace("/", "_")
            wpath = cdir / f"{stem}.windows.csv"
            with open(wpath, "w", newline="", encoding="utf-8") as f:
                w = csv.writer(f, lineterminator="\n")
                w.writerow(["window_start_s", "window_end_s", "avg_kbps_in", "avg_latency_ms", "sample_count"])
                for ws in r.windows:
                    w.writerow([fmt2(ws.window_start_s), fmt2(ws.window_end_s), fmt2(ws.avg_kbps_in), fmt2(ws.avg_latency_ms), ws.sample_count])
            dpath = cdir / f"{stem}.decisions.csv"
            with DecisionLog(dpath) as dlog:
                for d in r.decisions:
                    dlog.log_decision(d)
            written += [wpath, dpath]
    return written
