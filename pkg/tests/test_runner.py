import csv
import json

import pytest

from srmptcp.cli import main
from srmptcp.runner import (
    EVENT_KINDS,
    EVENTS_COLUMNS,
    METRICS_COLUMNS,
    EventRow,
    MetricsRow,
    read_events,
    read_metrics,
    run,
    simulate,
    summarize,
    summarize_dir,
    window_mean_mbps,
)
from srmptcp.scenario import parse_config

SMALL = {
    "duration": 12,
    "seed": 3,
    "rsus": [
        {"rsu_id": "A", "intervals": [[0, 6]]},
        {"rsu_id": "B", "intervals": [[3, 12]]},
    ],
}


@pytest.fixture(scope="module")
def small_run():
    return simulate(parse_config(SMALL), keep_delivery_log=True)


def test_one_rsu_smoke_run():
    result = simulate(parse_config({"duration": 5, "rsus": [{"rsu_id": "A", "intervals": [[0, 5]]}]}))
    assert window_mean_mbps(result.metrics, 1, 1, 5) >= 1.0
    assert result.summary.handover_count == 0


def test_metrics_bins_are_contiguous(small_run):
    starts = sorted({r.bin_start_s for r in small_run.metrics})
    assert starts == [float(b) for b in range(12)]


def test_bin_bytes_sum_to_sink_bytes(small_run):
    conn = small_run.connection
    assert sum(r.bytes for r in small_run.metrics) == conn.sink.bytes_received
    assert small_run.summary.total_bytes == small_run.summary.app_bytes
    assert conn.sink.violations == 0


def test_event_kinds_and_handover(small_run):
    assert {e.event for e in small_run.events} <= set(EVENT_KINDS)
    adds = [e for e in small_run.events if e.event == "subflow_add"]
    removes = [e for e in small_run.events if e.event == "subflow_remove"]
    assert [e.time_s for e in adds] == [0.0, 3.0]
    assert [e.time_s for e in removes] == [8.0]
    assert small_run.summary.handover_count == 2
    assert small_run.subflow_rsu == {1: "A", 2: "B"}


def test_rows_carry_rsu_and_state(small_run):
    for r in small_run.metrics:
        assert r.rsu_id == {1: "A", 2: "B"}[r.subflow_id]
        assert r.srtt_ms > 0 and r.cwnd_bytes > 0
        assert r.bitrate_mbps == pytest.approx(r.bytes * 8 / 1e6)


def test_summarize_phases_from_events():
    rows = [MetricsRow(float(b), 1, "A", 1_000_000, 8.0, 20.0, 1) for b in range(10)]
    events = [EventRow(0.0, "subflow_add", 1, ""), EventRow(5.0, "subflow_add", 2, "")]
    s = summarize(rows, events, duration_s=10)
    assert [(p.start_s, p.end_s, p.window_start_s, p.bins) for p in s.phases] == [(0, 5, 2, 3), (5, 10, 7, 3)]
    assert s.phases[0].aggregate_mbps == pytest.approx(8.0)
    assert s.phase_at(6).start_s == 5
    with pytest.raises(ValueError):
        summarize([], events)


def test_run_writes_files_and_summarize_dir_agrees(tmp_path, small_run):
    out = tmp_path / "out"
    result = run(parse_config(SMALL), out)
    with open(out / "metrics.csv", newline="") as fh:
        assert next(csv.reader(fh)) == METRICS_COLUMNS
    with open(out / "events.csv", newline="") as fh:
        assert next(csv.reader(fh)) == EVENTS_COLUMNS
    assert len(read_metrics(out / "metrics.csv")) == len(result.metrics)
    assert len(read_events(out / "events.csv")) == len(result.events)
    again = summarize_dir(out)
    saved = json.loads((out / "summary.json").read_text())
    assert again.total_bytes == saved["total_bytes"]
    for a, b in zip(again.phases, result.summary.phases):
        assert a.aggregate_mbps == pytest.approx(b.aggregate_mbps, rel=1e-6)
    assert result.metrics_csv() == small_run.metrics_csv()


def test_same_seed_gives_identical_csvs(small_run):
    other = simulate(parse_config(SMALL))
    assert other.metrics_csv() == small_run.metrics_csv()
    assert other.events_csv() == small_run.events_csv()


def test_cli_run_and_summarize(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(SMALL))
    out = tmp_path / "o"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "metrics.csv").exists()
    capsys.readouterr()
    assert main(["summarize", "--in", str(out), "--json"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["handover_count"] == 2


def test_cli_config_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({**SMALL, "bogus": 1}))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "bogus" in capsys.readouterr().err


def test_cli_missing_dir_exit_code(tmp_path, capsys):
    assert main(["summarize", "--in", str(tmp_path / "nothing")]) == 1


def test_cli_prints_builtin(capsys):
    assert main(["config", "delay200"]) == 0
    assert json.loads(capsys.readouterr().out)["rsus"][1]["extra_delay"] == 0.2
