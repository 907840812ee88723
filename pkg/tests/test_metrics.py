import math
import random

import pytest

from enrichbench.metrics import (
    BUSY_HEADER,
    CACHE_HEADER,
    CONSUMED_HEADER,
    LATENCY_HEADER,
    QUEUES_HEADER,
    CsvSink,
    EmptyHistogram,
    FirstWindowTracker,
    LatencyHistogram,
    MetricsFrame,
    fmt_num,
)

SQRT2 = math.sqrt(2.0)


def test_grid_spans_declared_range_with_sqrt2_factor():
    bounds = LatencyHistogram.bucket_bounds_us()
    assert bounds[0] == 100  # 0.1 ms
    assert bounds[-1] >= 120_000_000  # 120 s
    assert bounds[-2] < 120_000_000
    for lo, hi in zip(bounds, bounds[1:]):
        assert abs(hi / lo - SQRT2) < 0.01


def test_quantile_reports_bucket_upper_bound():
    # 99 samples at 1ms and one at 500ms: p50 is the upper bound of the
    # bucket holding 1ms.  Oracle: first grid point >= 1000us.
    bounds = LatencyHistogram.bucket_bounds_us()
    ub_1ms = next(b for b in bounds if b >= 1000)
    h = LatencyHistogram()
    for _ in range(99):
        h.record(1000)
    h.record(500_000)
    assert h.quantile_us(0.5) == ub_1ms
    assert h.quantile_us(0.99) == ub_1ms
    # The single 500ms outlier owns the top of the distribution.
    ub_500ms = next(b for b in bounds if b >= 500_000)
    assert h.quantile_us(1.0) == ub_500ms


def test_exponential_median_lands_within_one_bucket_factor():
    # Oracle: the median of Exponential(mean=100ms) is ln(2)*100ms = 69.3ms.
    rng = random.Random(31)
    h = LatencyHistogram()
    for _ in range(100_000):
        h.record(round(rng.expovariate(1 / 100.0) * 1000))  # ms -> us
    true_median_us = math.log(2) * 100_000
    p50 = h.quantile_us(0.5)
    assert true_median_us / SQRT2 <= p50 <= true_median_us * SQRT2 * 1.01


def test_quantile_error_bound_property():
    # Reported quantile is never below the true one and at most sqrt(2) above
    # (plus integer-rounding slack on the grid).
    rng = random.Random(37)
    values = [round(rng.lognormvariate(10, 2)) for _ in range(20_000)]
    h = LatencyHistogram()
    for v in values:
        h.record(v)
    values.sort()
    for q in (0.5, 0.9, 0.95, 0.99):
        true_q = values[math.ceil(q * len(values)) - 1]
        got = h.quantile_us(q)
        assert got >= min(true_q, 120_000_000)
        assert got <= max(true_q * SQRT2 * 1.01, 150)


def test_exact_mean_not_quantized():
    h = LatencyHistogram()
    for v in (100, 250, 777):
        h.record(v)
    assert h.mean_us == (100 + 250 + 777) / 3
    assert h.sum_us == 1127
    assert h.max_us == 777


def test_values_beyond_grid_clamp_into_top_bucket():
    h = LatencyHistogram()
    h.record(500_000_000)  # 500 s
    assert h.quantile_us(1.0) == LatencyHistogram.bucket_bounds_us()[-1]
    assert h.max_us == 500_000_000


def test_empty_histogram_raises():
    with pytest.raises(EmptyHistogram):
        LatencyHistogram().quantile_us(0.5)
    with pytest.raises(EmptyHistogram):
        _ = LatencyHistogram().mean_us


def test_tracker_records_first_window_arithmetic():
    # Worked example: ingested at 12.3s, pane emitted at 15s + 20ms.
    t = FirstWindowTracker(dedup=False, capture=True)
    assert t.record(1, 12_300_000, 12_300_000, 15_020_000)
    assert t.total.sum_us == 2_720_000  # 2.72 s
    assert t.capture == [(15_020_000, 2_720_000)]


def test_tracker_dedup_drops_replayed_ids():
    t = FirstWindowTracker(dedup=True)
    assert t.record(7, 0, 0, 10)
    assert not t.record(7, 0, 0, 999)  # replay: no second sample
    assert t.total.count == 1
    t.rotate_seen()
    assert not t.record(7, 0, 0, 999)  # still remembered one rotation back
    t.rotate_seen()
    t.rotate_seen()
    assert t.record(7, 0, 0, 999)  # aged out after two rotations


def test_tracker_without_dedup_skips_bookkeeping():
    t = FirstWindowTracker(dedup=False)
    assert t.record(7, 0, 0, 10)
    assert t.record(7, 0, 0, 20)  # nothing can replay in failure-free runs
    assert t.total.count == 2


def test_fmt_num_canonical_forms():
    assert fmt_num(4000.0) == "4000"
    assert fmt_num(0.125) == "0.125"
    assert fmt_num(3) == "3"
    assert fmt_num(2262.741699796952) == "2262.741699796952"


def _frame(**kw):
    base = dict(
        time_s=15.0,
        interval_s=15.0,
        latency_count=2,
        p50_us=2_262_742,
        p95_us=4_525_483,
        p99_us=4_525_483,
        max_us=4_800_000,
        p50_from_create_us=2_262_742,
        consumed=60_000,
        generated=60_000,
        hits=[10, 0],
        misses=[5, 0],
        busy_us=[1_500_000, 0],
        queue_occupancy=[3, 0],
        queue_capacity=1000,
    )
    base.update(kw)
    return MetricsFrame(**base)


def test_csv_headers_and_rows_byte_exact(tmp_path):
    sink = CsvSink(tmp_path)
    sink.write_frame(_frame())
    sink.close()
    assert (tmp_path / "latency.csv").read_bytes() == (
        LATENCY_HEADER + "\n15,2,2262.742,4525.483,4525.483,4800,2262.742\n"
    ).encode()
    assert (tmp_path / "cache.csv").read_bytes() == (
        CACHE_HEADER + "\n15,0,10,5,"
        + fmt_num(10 / 15)
        + "\n15,1,0,0,\n"
    ).encode()
    assert (tmp_path / "busy.csv").read_bytes() == (
        BUSY_HEADER + "\n15,0,100\n15,1,0\n"
    ).encode()
    assert (tmp_path / "consumed.csv").read_bytes() == (
        CONSUMED_HEADER + "\n15,4000,4000\n"
    ).encode()
    assert (tmp_path / "queues.csv").read_bytes() == (
        QUEUES_HEADER + "\n15,enrich-0,3,1000\n15,enrich-1,0,1000\n"
    ).encode()


def test_hit_rate_absent_when_no_lookups(tmp_path):
    sink = CsvSink(tmp_path)
    sink.write_frame(_frame(hits=[0], misses=[0]))
    sink.close()
    lines = (tmp_path / "cache.csv").read_text().splitlines()
    assert lines[1] == "15,0,0,0,"  # absent, not 0


def test_empty_latency_interval_writes_absent_quantiles(tmp_path):
    sink = CsvSink(tmp_path)
    sink.write_frame(
        _frame(latency_count=0, p50_us=None, p95_us=None, p99_us=None,
               max_us=None, p50_from_create_us=None)
    )
    sink.close()
    lines = (tmp_path / "latency.csv").read_text().splitlines()
    assert lines[1] == "15,0,,,,,"


def test_exposition_dump_format(tmp_path):
    sink = CsvSink(tmp_path, emit_exposition=True)
    sink.write_frame(_frame())
    sink.close()
    text = (tmp_path / "metrics.prom").read_text()
    assert 'consumed_events_per_s{time_s="15"} 4000\n' in text
    assert 'first_window_latency_ms{quantile="0.5",time_s="15"} 2262.742\n' in text
    assert 'subtask_busy_ms_per_s{subtask="0",time_s="15"} 100\n' in text
    assert 'queue_occupancy{channel="enrich-1",time_s="15"} 0\n' in text


def test_sink_rows_written_when_enabled(tmp_path):
    sink = CsvSink(tmp_path, emit_sink=True)
    sink.write_sink_row(5_000_000, 15_000_000, 42, 3, 12345, 1)
    sink.close()
    assert (tmp_path / "sink.csv").read_text().splitlines()[1] == "5,15,42,3,12345,1"
    assert "sink.csv" in sink.csv_names()
