"""Run a scenario end to end and turn it into metrics.

Outputs, per run directory:

``metrics.csv``
    ``bin_start_s, subflow_id, rsu_id, bytes, bitrate_mbps, srtt_ms, cwnd_bytes``;
    one row per bin and subflow alive during that bin.
``events.csv``
    ``time_s, event, subflow_id, detail``.
``summary.json``
    The :class:`RunSummary` of the run.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable

from srmptcp.handover import HandoverCM
from srmptcp.mptcp import Connection
from srmptcp.radio import RadioMedium
from srmptcp.scenario import ScenarioConfig
from srmptcp.scheduler import Decision, make_scheduler
from srmptcp.sim import SimulationError, Simulator, seconds, to_seconds

METRICS_COLUMNS = ["bin_start_s", "subflow_id", "rsu_id", "bytes", "bitrate_mbps", "srtt_ms", "cwnd_bytes"]
EVENTS_COLUMNS = ["time_s", "event", "subflow_id", "detail"]
EVENT_KINDS = ("subflow_add", "subflow_remove", "link_up", "link_down", "retransmit", "reinjection")
RAMP = seconds(2)


@dataclass
class MetricsRow:
    bin_start_s: float
    subflow_id: int
    rsu_id: Any
    bytes: int
    bitrate_mbps: float
    srtt_ms: float
    cwnd_bytes: int


@dataclass
class EventRow:
    time_s: float
    event: str
    subflow_id: int | None
    detail: str


@dataclass
class PhaseStat:
    start_s: float
    end_s: float
    window_start_s: float
    bins: int
    subflow_mbps: dict[int, float]
    aggregate_mbps: float


@dataclass
class RunSummary:
    phases: list[PhaseStat]
    total_bytes: int
    handover_count: int
    max_delivery_gap_s: float | None = None
    app_bytes: int | None = None

    def phase_at(self, t: float) -> PhaseStat | None:
        for p in self.phases:
            if p.start_s <= t < p.end_s:
                return p
        return None

    def to_dict(self) -> dict:
        d = asdict(self)
        for p in d["phases"]:
            p["subflow_mbps"] = {str(k): v for k, v in p["subflow_mbps"].items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunSummary":
        phases = [
            PhaseStat(**{**p, "subflow_mbps": {int(k): v for k, v in p["subflow_mbps"].items()}})
            for p in d["phases"]
        ]
        return cls(phases, d["total_bytes"], d["handover_count"], d.get("max_delivery_gap_s"), d.get("app_bytes"))


@dataclass
class RunResult:
    config: ScenarioConfig
    metrics: list[MetricsRow]
    events: list[EventRow]
    summary: RunSummary
    medium_bins: list[dict]
    connection: Connection
    medium: RadioMedium
    cm: HandoverCM
    sim: Simulator
    decisions: list[Decision] | None = None
    subflow_rsu: dict[int, Any] = field(default_factory=dict)

    def metrics_csv(self) -> str:
        return format_metrics(self.metrics)

    def events_csv(self) -> str:
        return format_events(self.events)


def simulate(
    config: ScenarioConfig,
    record_decisions: bool = False,
    keep_delivery_log: bool = False,
    trace: bool = False,
) -> RunResult:
    """Build the stack described by ``config``, run it to ``duration`` and collect metrics."""
    sim = Simulator(seed=config.seed, trace=trace)
    schedule = config.range_schedule()
    events: list[EventRow] = []

    def record(t: int, kind: str, subflow_id: int | None, detail: str) -> None:
        events.append(EventRow(to_seconds(t), kind, subflow_id or None, detail))

    medium = RadioMedium(sim, config.medium, reachable=schedule.in_range, bin_width=config.metrics_bin)
    conn = Connection(
        sim,
        medium,
        config.engine,
        scheduler=make_scheduler(config.scheduler),
        congestion=config.congestion,
        record_event=record,
        record_decisions=record_decisions,
        keep_delivery_log=keep_delivery_log,
        bin_width=config.metrics_bin,
    )
    cm = HandoverCM(sim, medium, conn, config.cm, config.link_specs(), record_event=record)
    cm.start(schedule)

    width = config.metrics_bin
    nbins = math.ceil(config.duration / width)
    snapshots: list[dict[int, tuple[float, int]]] = []

    def tick(b: int) -> None:
        # srtt/cwnd state of every subflow alive in bin b, taken at the bin's end
        start = b * width
        snap = {}
        for sf in conn.subflows.values():
            if sf.created_at >= start + width:
                continue
            if sf.removed_at is not None and sf.removed_at <= start:
                continue
            if sf.bin_rtt_count:
                srtt = sf.bin_rtt_sum / sf.bin_rtt_count
            else:
                srtt = sf.rtt_estimate
            sf.bin_rtt_sum, sf.bin_rtt_count = 0.0, 0
            snap[sf.subflow_id] = (srtt / 1000.0, int(sf.cwnd))
        snapshots.append(snap)

    for b in range(nbins):
        sim.schedule(min((b + 1) * width, config.duration), tick, b, kind="metrics_tick")

    try:
        sim.run_until(config.duration)
    except SimulationError:
        raise
    except Exception as exc:
        raise SimulationError(f"{type(exc).__name__}: {exc}", sim.now) from exc
    conn.finish()

    metrics: list[MetricsRow] = []
    width_s = to_seconds(width)
    for b, snap in enumerate(snapshots):
        sids = set(snap) | {sid for (bb, sid) in conn.credit if bb == b}
        for sid in sorted(sids):
            nbytes = conn.credit.get((b, sid), 0)
            srtt_ms, cwnd = snap.get(sid, (conn.subflows[sid].rtt_estimate / 1000.0, int(conn.subflows[sid].cwnd)))
            metrics.append(
                MetricsRow(
                    bin_start_s=to_seconds(b * width),
                    subflow_id=sid,
                    rsu_id=cm.subflow_rsu.get(sid, ""),
                    bytes=nbytes,
                    bitrate_mbps=nbytes * 8 / width_s / 1e6,
                    srtt_ms=srtt_ms,
                    cwnd_bytes=cwnd,
                )
            )

    summary = summarize(metrics, events, duration_s=to_seconds(config.duration), bin_s=width_s)
    summary.max_delivery_gap_s = to_seconds(conn.max_delivery_gap)
    summary.app_bytes = conn.sink.bytes_received
    medium_bins = [medium.bin_report(b) for b in range(nbins)]
    return RunResult(
        config=config,
        metrics=metrics,
        events=events,
        summary=summary,
        medium_bins=medium_bins,
        connection=conn,
        medium=medium,
        cm=cm,
        sim=sim,
        decisions=conn.decisions,
        subflow_rsu=dict(cm.subflow_rsu),
    )


def summarize(
    metrics: list[MetricsRow],
    events: Iterable[EventRow],
    duration_s: float | None = None,
    bin_s: float = 1.0,
    ramp_s: float = to_seconds(RAMP),
) -> RunSummary:
    """Per-phase mean bitrates between topology changes.

    A phase runs from one subflow addition/removal to the next. Its means
    use only bins lying fully inside the phase and starting at least
    ``ramp_s`` after the change. Phases with no such bin are omitted.
    """
    if not metrics:
        raise ValueError("summarize: no metrics rows")
    events = list(events)
    if duration_s is None:
        duration_s = max(r.bin_start_s for r in metrics) + bin_s
    changes = sorted({e.time_s for e in events if e.event in ("subflow_add", "subflow_remove")})
    if not changes or changes[0] > 0:
        changes = [0.0] + changes
    bounds = changes + [duration_s]

    by_bin: dict[float, dict[int, int]] = {}
    for r in metrics:
        by_bin.setdefault(r.bin_start_s, {})
        by_bin[r.bin_start_s][r.subflow_id] = by_bin[r.bin_start_s].get(r.subflow_id, 0) + r.bytes

    eps = 1e-9
    phases = []
    for start, end in zip(bounds, bounds[1:]):
        if end - start <= eps:
            continue
        w0 = start + ramp_s
        window = [b for b in sorted(by_bin) if b >= w0 - eps and b + bin_s <= end + eps]
        if not window:
            continue
        sids = sorted({sid for b in window for sid in by_bin[b]})
        per = {sid: sum(by_bin[b].get(sid, 0) for b in window) * 8 / (len(window) * bin_s) / 1e6 for sid in sids}
        agg = sum(sum(by_bin[b].values()) for b in window) * 8 / (len(window) * bin_s) / 1e6
        phases.append(PhaseStat(start, end, w0, len(window), per, agg))

    adds = sum(1 for e in events if e.event == "subflow_add")
    removes = sum(1 for e in events if e.event == "subflow_remove")
    return RunSummary(
        phases=phases,
        total_bytes=sum(r.bytes for r in metrics),
        handover_count=max(adds - 1, 0) + removes,
    )


def window_mean_mbps(metrics: list[MetricsRow], subflow_id: int | None, start_s: float, end_s: float, bin_s: float = 1.0) -> float:
    """Mean bitrate over the bins in ``[start_s, end_s)``; all subflows when ``subflow_id`` is None."""
    bins = {r.bin_start_s for r in metrics if start_s - 1e-9 <= r.bin_start_s and r.bin_start_s + bin_s <= end_s + 1e-9}
    nbins = round((end_s - start_s) / bin_s)
    total = sum(
        r.bytes
        for r in metrics
        if r.bin_start_s in bins and (subflow_id is None or r.subflow_id == subflow_id)
    )
    return total * 8 / (nbins * bin_s) / 1e6


def window_bytes(metrics: list[MetricsRow], subflow_id: int, start_s: float, end_s: float) -> int:
    return sum(r.bytes for r in metrics if r.subflow_id == subflow_id and start_s <= r.bin_start_s < end_s)


# -- CSV / JSON I/O -------------------------------------------------------------


def format_metrics(rows: Iterable[MetricsRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_COLUMNS)
    for r in rows:
        w.writerow(
            [f"{r.bin_start_s:.3f}", r.subflow_id, r.rsu_id, r.bytes, f"{r.bitrate_mbps:.6f}", f"{r.srtt_ms:.3f}", r.cwnd_bytes]
        )
    return buf.getvalue()


def format_events(rows: Iterable[EventRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EVENTS_COLUMNS)
    for r in rows:
        w.writerow([f"{r.time_s:.6f}", r.event, "" if r.subflow_id is None else r.subflow_id, r.detail])
    return buf.getvalue()


def read_metrics(path: str | Path) -> list[MetricsRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != METRICS_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        return [
            MetricsRow(
                float(row["bin_start_s"]),
                int(row["subflow_id"]),
                row["rsu_id"],
                int(row["bytes"]),
                float(row["bitrate_mbps"]),
                float(row["srtt_ms"]),
                int(row["cwnd_bytes"]),
            )
            for row in reader
        ]


def read_events(path: str | Path) -> list[EventRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != EVENTS_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        return [
            EventRow(float(row["time_s"]), row["event"], int(row["subflow_id"]) if row["subflow_id"] else None, row["detail"])
            for row in reader
        ]


def run(config: ScenarioConfig, out_dir: str | Path) -> RunResult:
    """Simulate ``config`` and write metrics.csv, events.csv and summary.json into ``out_dir``."""
    result = simulate(config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(result.metrics_csv())
    (out / "events.csv").write_text(result.events_csv())
    (out / "summary.json").write_text(json.dumps(result.summary.to_dict(), indent=2, sort_keys=True) + "\n")
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2) + "\n")
    return result


def summarize_dir(in_dir: str | Path) -> RunSummary:
    """Recompute the summary of a finished run from its CSV files."""
    d = Path(in_dir)
    metrics = read_metrics(d / "metrics.csv")
    events = read_events(d / "events.csv")
    duration = None
    cfg = d / "config.json"
    if cfg.exists():
        duration = json.loads(cfg.read_text()).get("duration")
    summary = summarize(metrics, events, duration_s=duration)
    prior = d / "summary.json"
    if prior.exists():
        old = json.loads(prior.read_text())
        summary.max_delivery_gap_s = old.get("max_delivery_gap_s")
        summary.app_bytes = old.get("app_bytes")
    return summary
