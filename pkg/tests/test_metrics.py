import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from v2xsim.metrics import (MetricsCollector, MetricsReport, ccdf, ccdf_at, cdf, cdf_at, hist_quantile, summarize,
                            write_report)
from v2xsim.traffic import AUTONOMOUS, INFOTAINMENT, Packet

samples = st.lists(st.integers(0, 50), min_size=1, max_size=200)


def test_cdf_examples():
    assert cdf_at([1, 2, 3], 2) == pytest.approx(2 / 3)
    assert cdf([4, 4, 4]) == [(4.0, 1.0)]
    assert cdf({1: 2, 3: 2}) == [(1.0, 0.5), (3.0, 1.0)]
    with pytest.raises(ValueError):
        cdf([])


def test_ccdf_examples():
    assert ccdf_at([1, 2, 3], 2) == pytest.approx(1 / 3)
    assert ccdf([1, 2, 3])[-1] == (3.0, 0.0)
    assert ccdf_at([1, 2, 3], 0) == 1.0
    with pytest.raises(ValueError):
        ccdf({})


@given(samples)
def test_distribution_properties(xs):
    c = cdf(xs)
    assert all(b[1] >= a[1] for a, b in zip(c, c[1:]))
    assert c[-1][1] == 1.0
    cc = ccdf(xs)
    assert all(b[1] <= a[1] for a, b in zip(cc, cc[1:]))
    for (v, p), (_, q) in zip(c, cc):
        assert p + q == pytest.approx(1.0)
    counts = {}
    for x in xs:
        counts[x] = counts.get(x, 0) + 1
    assert cdf(counts) == pytest.approx(c)


def _report(**kw):
    base = dict(config={"scenario_id": 3, "mode": "proposed", "sigma_m": 5.0, "seed": 0, "duration_tti": 100},
                window_s=0.1)
    base.update(kw)
    return MetricsReport(**base)


def test_summary_latency_one():
    r = _report(latency_hist={"autonomous": {1: 500}, "infotainment": {1: 10}})
    row = summarize(r)
    assert row["lat_mean_ms_autonomous"] == 1.0 and row["lat_p99_ms_autonomous"] == 1.0
    assert row["frac_within_100ms"] == 1.0


def test_summary_reliability():
    r = _report(delivered={"autonomous": 99_999}, failed={"autonomous": 1})
    row = summarize(r)
    assert row["reliability_autonomous"] == pytest.approx(0.99999)
    assert row["meets_reliability_target"]
    assert 0 <= row["failure_ratio_autonomous"] <= 1


def test_summary_leaders_and_throughput():
    r = _report(leaders_per_km=[22.0, 20.0, 24.0],
                throughput_bps={"autonomous": {0: 128_000.0, 1: 127_000.0, 2: 200_000.0, 3: 128_000.0}},
                clustered_share={0: 1.0, 1: 0.2, 2: 0.6, 3: 0.0})
    row = summarize(r)
    assert row["leaders_per_km_mean"] == 22.0
    assert row["frac_128kbps"] == 0.75
    assert row["frac_128kbps_clustered"] == 1.0


def test_quantile():
    assert hist_quantile({1: 98, 7: 2}, 0.99) == 7
    assert hist_quantile({1: 99, 7: 1}, 0.99) == 1


def _collected():
    col = MetricsCollector(3)
    pkts = [Packet(0, 1000, 0, 0, INFOTAINMENT, departure_tti=2), Packet(1, 1280, 5, 0, AUTONOMOUS, departure_tti=5),
            Packet(1, 1280, 6, 0, AUTONOMOUS, failed=True, departure_tti=9)]
    col.record_packets(pkts)
    col.record_served(0, [1000, 0])
    col.record_served(1, [0, 1280])
    col.record_queues(AUTONOMOUS, np.array([0, 1, 2561]))
    col.record_queues(INFOTAINMENT, np.array([0, 0, 1000]))
    col.record_epoch(7, 3.464, [0, 2])
    col.warnings["leader_merge"] += 2
    return col.finish({"scenario_id": 1, "mode": "proposed", "sigma_m": 5.0, "seed": 3, "duration_tti": 10},
                      0.01, [0, 1, 2], [0, 1, 2])


def test_collector_contents():
    r = _collected()
    assert r.latency_hist == {"infotainment": {3: 1}, "autonomous": {1: 1}}
    assert r.failed["autonomous"] == 1 and r.delivered["autonomous"] == 1
    assert r.queue_hist["autonomous"] == {0: 1, 1: 1, 3: 1}
    assert r.throughput_bps["autonomous"][1] == pytest.approx(128_000)
    assert r.clustered_share == {0: 1.0, 1: 0.0, 2: 1.0}
    assert r.leaders_per_km == [pytest.approx(7 / 3.464)]


def test_report_round_trip():
    r = _collected()
    assert MetricsReport.from_json(r.to_json()) == r


def test_csv_headers(tmp_path):
    write_report(_collected(), tmp_path)
    expect = {
        "cdf_throughput_autonomous.csv": ["value_bps", "prob"],
        "ccdf_latency_autonomous.csv": ["latency_ms", "exceed_prob"],
        "cdf_queuelen_infotainment.csv": ["queue_len_packets", "prob"],
    }
    for name, header in expect.items():
        with open(tmp_path / name) as fh:
            assert next(csv.reader(fh)) == header
    with open(tmp_path / "summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1 and rows[0]["mode"] == "proposed"
    assert (tmp_path / "report.json").exists()
