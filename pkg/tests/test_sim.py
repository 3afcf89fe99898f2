"""Event engine: service arithmetic, determinism, metrics, summaries."""

import pytest

from aqmlab.queue import TrafficClass
from aqmlab.scenario import LinkProfile, loads
from aqmlab.sim import (
    CSV_COLUMNS,
    MetricsRecord,
    link_service,
    mark_fraction_cv,
    percentile,
    run,
    summarize,
    write_metrics_csv,
)

MS = 1_000_000
SEC = 1_000_000_000

BASIC = """
duration_s = 2.0
seed = 1
[link]
segments = [{ start_s = 0.0, rate_mbps = 40.0 }]
[flows]
n_l = 1
rtt_ms = 10.0
[aqm]
vq_mode = "sojourn"
"""


class TestLinkService:
    def test_mtu_at_12_mbps_takes_one_ms(self):
        profile = LinkProfile(((0, 12_000_000),))
        assert link_service(0, profile, 1500) == MS

    def test_halving_rate_doubles_service(self):
        profile = LinkProfile(((0, 12_000_000),))
        slow = LinkProfile(((0, 6_000_000),))
        assert link_service(0, slow, 1500) == 2 * link_service(0, profile, 1500)

    def test_segment_lookup(self):
        profile = LinkProfile(((0, 40_000_000), (5 * SEC, 10_000_000)))
        assert link_service(6 * SEC, profile, 1500) == 1500 * 8 * SEC // 10_000_000


class TestPercentile:
    def test_nearest_rank(self):
        values = list(range(1, 101))
        assert percentile(values, 99) == 99
        assert percentile(values, 50) == 50
        assert percentile(values, 100) == 100

    def test_single_value(self):
        assert percentile([7], 99) == 7

    def test_empty_is_zero(self):
        assert percentile([], 99) == 0


class TestMarkFractionCv:
    def test_alternating_on_off_is_one(self):
        assert mark_fraction_cv([0.0, 1.0] * 50) == pytest.approx(1.0)

    def test_constant_signal_is_zero(self):
        assert mark_fraction_cv([0.25] * 10) == pytest.approx(0.0)

    def test_empty_and_zero_mean_are_undefined(self):
        assert mark_fraction_cv([]) is None
        assert mark_fraction_cv([0.0, 0.0]) is None


class TestRun:
    def test_deterministic_byte_identical_csv(self, tmp_path):
        scenario = loads(BASIC)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        write_metrics_csv(run(scenario).records, str(a))
        write_metrics_csv(run(scenario).records, str(b))
        assert a.read_bytes() == b.read_bytes()

    def test_sample_count_and_utilization_domain(self):
        scenario = loads(BASIC.replace("duration_s = 2.0", "duration_s = 10.0"))
        result = run(scenario)
        assert len(result.records) >= 1000  # 10 ms cadence for 10 s, one flow
        assert all(0.0 <= r.utilization <= 1.0 for r in result.records)
        assert 0.0 <= result.utilization() <= 1.0

    def test_goodput_accounting(self):
        result = run(loads(BASIC))
        expected = result.delivered_bytes[0] * 8 * SEC / result.duration
        assert result.flow_goodput_bps(0) == pytest.approx(expected)
        assert result.delivered_bytes[0] > 0

    def test_debug_mode_checks_every_event(self):
        run(loads(BASIC.replace("duration_s = 2.0", "duration_s = 0.5")), debug=True)

    def test_rate_change_mid_run(self):
        scenario = loads(
            """
duration_s = 2.0
seed = 1
[link]
segments = [
  { start_s = 0.0, rate_mbps = 40.0 },
  { start_s = 1.0, rate_mbps = 10.0 },
]
[flows]
n_l = 1
rtt_ms = 10.0
[aqm]
vq_mode = "sojourn"
"""
        )
        result = run(scenario, debug=True)
        assert result.delivered_bytes[0] > 0

    def test_mixed_traffic_with_drops_conserved(self):
        scenario = loads(
            """
duration_s = 5.0
seed = 1
[link]
segments = [{ start_s = 0.0, rate_mbps = 10.0 }]
[flows]
n_l = 1
n_c = 1
rtt_ms = 10.0
[aqm]
k = 2.0
[aqm.base]
target_ms = 5.0
"""
        )
        result = run(scenario)  # end-of-run conservation asserts internally
        assert result.delivered_bytes[0] > 0 and result.delivered_bytes[1] > 0

    def test_pacing_absorbs_bursts(self):
        paced = run(loads(BASIC))
        unpaced = run(loads(BASIC.replace("[aqm]", "pacing = false\n[aqm]")))
        assert paced.max_lq_backlog < unpaced.max_lq_backlog


class TestSummaries:
    def _record(self, **kw):
        base = dict(
            time_ns=10 * MS,
            flow_id=0,
            traffic_class=TrafficClass.L4S,
            goodput_bps=9_840_000,
            cwnd_bytes=15_000,
            marks=3,
            drops=0,
            real_sojourn_p99_ns=800_000,
            virtual_sojourn_p99_ns=1_200_000,
            backlog_bytes=3000,
            vbacklog_bytes=4500,
            utilization=0.984,
        )
        base.update(kw)
        return MetricsRecord(**base)

    def test_single_record_summary_echoes_it(self):
        summary = summarize([self._record()])
        assert summary.utilization == pytest.approx(0.984)
        assert summary.real_sojourn_p99_ns == 800_000
        assert summary.virtual_sojourn_p99_ns == 1_200_000
        flow = summary.flows[0]
        assert flow.mean_goodput_bps == pytest.approx(9_840_000)
        assert flow.marks == 3 and flow.drops == 0

    def test_constant_utilization_series(self):
        records = [self._record(time_ns=(i + 1) * 10 * MS) for i in range(5)]
        assert summarize(records).utilization == pytest.approx(0.984)

    def test_empty_records_rejected(self):
        with pytest.raises(ValueError):
            summarize([])

    def test_run_summary_carries_mark_fractions(self):
        summary = summarize(run(loads(BASIC)))
        flow = summary.flows[0]
        assert flow.mean_mark_fraction is not None
        assert "utilization" in summary.to_text()


class TestCsv:
    def test_header_and_sorted_rows(self, tmp_path):
        records = [
            MetricsRecord(
                time_ns=t,
                flow_id=fid,
                traffic_class=TrafficClass.L4S,
                goodput_bps=0,
                cwnd_bytes=0,
                marks=0,
                drops=0,
                real_sojourn_p99_ns=0,
                virtual_sojourn_p99_ns=0,
                backlog_bytes=0,
                vbacklog_bytes=0,
                utilization=0.5,
            )
            for t, fid in [(20, 1), (10, 1), (10, 0), (20, 0)]
        ]
        path = tmp_path / "m.csv"
        write_metrics_csv(records, str(path))
        lines = path.read_text().strip().splitlines()
        assert lines[0] == ",".join(CSV_COLUMNS)
        keys = [tuple(map(int, line.split(",")[:2])) for line in lines[1:]]
        assert keys == [(10, 0), (10, 1), (20, 0), (20, 1)]
        assert lines[1].endswith("0.500000")
